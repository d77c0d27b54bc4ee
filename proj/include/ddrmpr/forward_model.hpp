#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddrmpr/field_ops.hpp"
#include "ddrmpr/linops.hpp"

namespace ddrmpr {

/// Which grid the measurements came from: either an oversampled Fourier
/// transform of an n_side x n_side image, or a generic m x n operator.
struct Geometry {
  enum class Kind : std::uint8_t { fourier, general };
  Kind kind = Kind::fourier;
  std::size_t n_side = 0;
  std::size_t factor = 2;
  std::size_t m = 0;
  std::size_t n = 0;

  static Geometry fourier(std::size_t n_side, std::size_t factor);
  static Geometry general(std::size_t m, std::size_t n);

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// Non-negative measured magnitudes y for one channel.
struct MeasurementSet {
  RVector y;
  double alpha = 0.0;
  /// Equivalent additive noise level handed to the sampler; always 0 for the
  /// noiseless DDRM contract.
  double sigma_y = 0.0;
  /// Seed given to the simulation. Channel c of a multi-channel image draws
  /// its noise from stream derive_seed(seed, c).
  std::uint64_t seed = 0;
  std::size_t channel = 0;
  std::string operator_id;
  Geometry geometry;
  /// Fraction of noisy intensities that were negative and clamped to zero.
  double clamped_fraction = 0.0;
};

/// Noisy intensity |Ax|^2 + w with w_i ~ N(0, alpha^2 |Ax|_i^2). Entries may be
/// negative; this is the raw left-hand side of the measurement model.
RVector noisy_intensity(const CVector& ax, double alpha, Rng& rng);

/// y_i = sqrt(max(|Ax|_i^2 + w_i, 0)). Deterministic under `seed`.
MeasurementSet simulate(const RealImage& x, const LinearOperator& op, double alpha,
                        std::uint64_t seed);

/// Per-channel simulation with independent noise streams (seed, channel).
std::vector<MeasurementSet> simulate_channels(const RealImage& x, const LinearOperator& op,
                                              double alpha, std::uint64_t seed);

/// Fourier convenience: pads by `factor`, records fourier geometry.
std::vector<MeasurementSet> simulate_fourier(const RealImage& x, std::size_t factor,
                                             double alpha, std::uint64_t seed);

/// Elementwise y^2.
RVector intensity(const MeasurementSet& mset);

/// Tensor + JSON sidecar persistence. The tensor is written to `stem`.dprt and
/// the sidecar {alpha, seed, operator_id, geometry, ...} to `stem`.json.
void save_measurement(const std::filesystem::path& stem, const MeasurementSet& mset);
MeasurementSet load_measurement(const std::filesystem::path& stem);

}  // namespace ddrmpr
