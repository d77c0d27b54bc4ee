#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ddrmpr/field_ops.hpp"
#include "ddrmpr/linops.hpp"

namespace ddrmpr {

/// Spatial-domain constraints. A pixel violates them when it lies outside the
/// support, or is negative while `nonneg` is set. Iterates are real, so the
/// real-valuedness constraint is enforced by discarding imaginary parts.
struct ConstraintSet {
  SupportMask support;
  bool nonneg = true;
  bool real_valued = true;

  /// Support on the top-left n_side x n_side block of the oversampled grid.
  static ConstraintSet fourier(std::size_t n_side, std::size_t factor, bool nonneg = true);
  /// Whole-grid support (no finite-support information).
  static ConstraintSet full(std::size_t height, std::size_t width, bool nonneg = true);

  void validate() const;
  bool violates(std::size_t i, double value) const {
    return !support.inside(i) || (nonneg && value < 0.0);
  }
  /// Zeroes every violating pixel.
  RealImage project(const RealImage& x) const;
};

struct HioParams {
  double beta = 0.9;
  std::size_t iters = 100;
  void validate() const;
};

enum class ApMethod : std::uint8_t { hio, er, general };
enum class ResidualKind : std::uint8_t { magnitude, intensity };

struct RandomInitParams {
  std::size_t num_inits = 50;
  std::size_t short_iters = 50;
  std::size_t final_iters = 1000;
  std::uint64_t seed = 0;
  /// Candidates may run concurrently; each draws from stream (seed, index).
  std::size_t jobs = 1;
  void validate() const;
};

/// Options shared by every alternating-projection run.
struct ApOptions {
  double beta = 0.9;
  ApMethod method = ApMethod::hio;
  ResidualKind residual = ResidualKind::magnitude;
  bool record_trace = true;
  CgOptions cg;
};

struct ApResult {
  /// Last iterate of the recursion (for HIO it carries feedback on violating
  /// pixels).
  RealImage iterate;
  /// Constraint projection of the last measurement projection u_k.
  RealImage estimate;
  /// Measurement residual of the estimate after each iteration.
  std::vector<double> residual_trace;
  double final_residual = 0.0;
};

/// u = Re A^+ { y * Ax / |Ax| }, with phase(0) := 1.
RealImage fourier_projection(const RealImage& x, const RVector& y, const LinearOperator& op,
                             const CgOptions& cg = {});

/// Hybrid input-output: u_k on non-violating pixels, x_k - beta u_k elsewhere.
ApResult hio_run(const RVector& y, const LinearOperator& op, const RealImage& init,
                 const HioParams& params, const ConstraintSet& cons, const ApOptions& opts = {});

/// Error reduction: violating pixels are zeroed.
ApResult er_run(const RVector& y, const LinearOperator& op, const RealImage& init,
                std::size_t iters, const ConstraintSet& cons, const ApOptions& opts = {});

/// Generic alternating projection x <- P(Re A^+{y * Ax/|Ax|}) with optional
/// spatial constraints.
ApResult ap_general_run(const RVector& y, const LinearOperator& op, const RealImage& init,
                        std::size_t iters, const std::optional<ConstraintSet>& cons,
                        const ApOptions& opts = {});

/// Dispatches on opts.method.
ApResult ap_run(const RVector& y, const LinearOperator& op, const RealImage& init,
                std::size_t iters, const ConstraintSet& cons, const ApOptions& opts);

struct RandomInitResult {
  RealImage estimate;
  ApResult final_run;
  std::size_t selected = 0;
  std::vector<double> candidate_residuals;
};

/// Multi-start initialization: num_inits short runs from uniform [0,1] starts
/// inside the support, keep the one with the smallest residual, then run it
/// for final_iters more iterations.
RandomInitResult random_init(const RVector& y, const LinearOperator& op,
                             const RandomInitParams& params, const ConstraintSet& cons,
                             const ApOptions& opts = {});

/// Uniform [0,1] start inside the support, zero outside.
RealImage random_start(const ConstraintSet& cons, Rng& rng);

/// ||y - |Ax|||_2 (magnitude) or ||y^2 - |Ax|^2||_2 (intensity).
double residual(const RVector& y, const RealImage& x, const LinearOperator& op,
                ResidualKind kind = ResidualKind::magnitude);

/// "iter,residual" CSV of a residual trace, iterations counted from 1.
std::string residual_trace_csv(const std::vector<double>& trace);

}  // namespace ddrmpr
