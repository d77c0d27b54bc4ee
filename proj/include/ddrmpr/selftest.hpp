#pragma once

// Executable consistency checks shared by the CLI selftest task and the
// acceptance suite.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ddrmpr {

struct EquivalenceOptions {
  std::size_t operators = 10;
  std::size_t steps = 20;
  std::size_t T = 1000;
  std::size_t t_init = 1000;
  std::vector<double> etas{0.2, 0.5, 1.0};
  std::vector<double> eta_bs{0.0, 0.5, 1.0};
  std::uint64_t seed = 7;
  double tolerance = 1e-6;
};

struct EquivalenceCase {
  std::string op_id;
  std::size_t m = 0, n = 0, rank = 0;
  double eta = 0.0, eta_b = 0.0;
  /// max over steps of ||x_spectral - x_simplified|| / ||x_spectral||.
  double max_rel_err = 0.0;
  /// Same, with the simplified path using 1 - eta mixing instead.
  double approx_rel_err = 0.0;
};

struct EquivalenceReport {
  std::vector<EquivalenceCase> cases;
  double max_rel_err = 0.0;
  double max_approx_rel_err = 0.0;
  /// max over the tested etas of |(1 - eta) - sqrt(1 - eta^2)|.
  double max_coefficient_gap = 0.0;
  double seconds = 0.0;
  bool passed = false;
};

/// Runs spectral and simplified trajectories from a shared initial draw with
/// coupled noise: null-space indices see V^T eps, measured indices see
/// V^T (eta eps + sqrt(1 - eta^2) eps_theta). The simplified path solves its
/// pseudoinverse by CG; the spectral path uses a dense SVD.
EquivalenceReport run_equivalence_suite(const EquivalenceOptions& opts = {});

struct MarginalStats {
  std::size_t draws = 0;
  /// Over every coordinate and visited timestep.
  double max_abs_mean = 0.0;
  double max_abs_var_dev = 0.0;
  /// Worst |epsilon_estimate - injected eps| with a perfect denoiser.
  double max_eps_recovery_err = 0.0;
  bool passed = false;
};

/// Normalized residual (x_t - sqrt(a_t) x0) / sqrt(1 - a_t) along sampler
/// trajectories driven by a perfect denoiser, plus epsilon recovery.
MarginalStats run_marginal_check(std::size_t draws = 100000, std::uint64_t seed = 11);

struct HioFixedPointStats {
  std::size_t trials = 0;
  /// Worst ||y - |A x_k||| / ||y|| after the run.
  double max_rel_residual = 0.0;
  /// Worst PSNR of the final estimate against the starting truth.
  double min_psnr = 0.0;
  bool passed = false;
};

/// HIO and ER started at the true image of noiseless Fourier magnitudes must
/// stay there.
HioFixedPointStats run_hio_fixed_point_check(std::size_t trials = 5, std::uint64_t seed = 3,
                                             std::size_t side = 16);

}  // namespace ddrmpr
