#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddrmpr/denoise.hpp"
#include "ddrmpr/field_ops.hpp"
#include "ddrmpr/linops.hpp"
#include "ddrmpr/rng.hpp"

namespace ddrmpr {

double alpha_from_sigma(double sigma);
/// Inverse of alpha_from_sigma on (0, 1].
double sigma_from_alpha(double alpha);

/// Ladder 0 = sigma_0 < sigma_1 < ... < sigma_T with alpha_t = 1 / (1 + sigma_t^2).
class NoiseSchedule {
 public:
  /// Validates: sigma_0 == 0, strictly increasing, finite, at least two entries.
  static NoiseSchedule from_sigmas(std::vector<double> sigmas, std::string kind = "custom");

  std::size_t T() const noexcept { return sigmas_.size() - 1; }
  double sigma(std::size_t t) const { return sigmas_.at(t); }
  double alpha(std::size_t t) const { return alphas_.at(t); }
  const std::vector<double>& sigmas() const noexcept { return sigmas_; }
  const std::vector<double>& alphas() const noexcept { return alphas_; }
  const std::string& kind() const noexcept { return kind_; }
  /// FNV-1a over the IEEE bytes of the ladder, hex encoded.
  std::string hash() const;

  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

 private:
  NoiseSchedule(std::vector<double> sigmas, std::string kind);
  std::vector<double> sigmas_;
  std::vector<double> alphas_;
  std::string kind_;
};

/// Linear-beta variance-preserving ladder: beta_t = s * (1 + 199 (t-1)/(T-1)),
/// with s solved so that sigma_T == sigma_max.
NoiseSchedule schedule_linear_vp(std::size_t T = 1000, double sigma_max = 100.0);
/// sigma_t = sigma_min * (sigma_max / sigma_min)^((t-1)/(T-1)) for t >= 1.
NoiseSchedule schedule_geometric(std::size_t T, double sigma_min, double sigma_max);

/// Branch-mixing coefficient applied to the epsilon estimate.
enum class NoiseMixing : std::uint8_t {
  /// 1 - eta, as in the simplified statement.
  linear,
  /// sqrt(1 - eta^2), the unapproximated spectral form.
  exact,
};

double mixing_coefficient(NoiseMixing mixing, double eta);

struct SamplerConfig {
  double eta = 1.0;
  double eta_b = 1.0;
  std::size_t steps = 20;
  std::size_t t_init = 1000;
  std::size_t n_avg = 1;
  std::uint64_t seed = 0;
  NoiseMixing mixing = NoiseMixing::linear;

  void validate(const NoiseSchedule& schedule) const;
  /// steps + 1 indices round(t_init * (steps - j) / steps), j = 0..steps:
  /// descending, t_init first, 0 last.
  std::vector<std::size_t> timesteps() const;

  nlohmann::json to_json() const;
  static SamplerConfig from_json(const nlohmann::json& j);
};

struct ImageShape {
  std::size_t height = 0, width = 0, channels = 1;
  std::size_t size() const noexcept { return height * width * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Sampler iterate in variance-preserving coordinates (symmetric range).
struct DdrmState {
  RVector x;
  std::size_t t = 0;
  Rng rng;
  /// Standard normal draw used by the most recent transition.
  RVector last_noise;
};

/// (x_next - sqrt(alpha) x_theta) / sqrt(1 - alpha). DomainError unless 0 < alpha < 1.
RVector epsilon_estimate(const RVector& x_next, const RVector& x_theta, double alpha_next);
RealImage epsilon_estimate(const RealImage& x_next, const RealImage& x_theta, double alpha_next);

/// x_t = sqrt(alpha) x0 + sqrt(1 - alpha) eps with eps drawn from `rng`.
RVector forward_diffuse(const RVector& x0, double alpha, Rng& rng);

/// Measurement y = H x (x in symmetric range) with H^+ y cached.
struct LinearMeasurement {
  LinearOperator op;
  CVector y;
  RVector pinv_y;
  CgOptions cg;

  static LinearMeasurement make(LinearOperator op, CVector y, CgOptions cg = {});
  /// Re(x + H^+ (y - H x)): the data-consistent part of the update.
  RVector consistent(const RVector& x) const;
};

/// Closed-form recombination of a denoised estimate with a data-consistent
/// proposal x_prime:
///   sqrt(a_t)(eta_b x' + (1 - eta_b) x_theta) + sqrt(1 - a_t)(eta eps + mix eps_theta).
/// eps_theta is estimated from x_next at a_next. x_prime is ignored when eta_b == 0.
RVector recombine(const RVector& x_next, const RVector& x_theta, const RVector& x_prime,
                  const RVector& eps, double alpha_t, double alpha_next,
                  const SamplerConfig& cfg);

/// Evaluates the denoiser on a VP-coordinate vector at timestep t.
RVector denoise_vector(const DenoiserHandle& den, const RVector& x, ImageShape shape,
                       const NoiseSchedule& schedule, std::size_t t);

/// Explicit noise for a spectral transition, given in the signal domain and
/// mapped by V^H. `eps` feeds null-space and middle-case indices, `eps_range`
/// the indices where the measurement dominates.
struct SpectralNoise {
  RVector eps;
  RVector eps_range;
};

/// Initial iterate: per spectral index N(ybar_i, sigma_T^2 - sigma_y^2 / s_i^2)
/// if s_i > 0, else N(0, sigma_T^2), mapped back by V and scaled by sqrt(alpha_T).
/// The draw is a signal-domain standard normal rotated by V^H.
DdrmState spectral_init(const CVector& y, const LinearOperator& op,
                        const NoiseSchedule& schedule, std::size_t t, double sigma_y, Rng rng);

/// sqrt(alpha_t) x_init + sqrt(1 - alpha_t) eps.
DdrmState simplified_init(const RVector& x_init, const NoiseSchedule& schedule, std::size_t t,
                          Rng rng);

/// One three-case spectral transition from state.t to t given x_theta.
/// Always uses sqrt(1 - eta^2) mixing. Requires op.svd().
DdrmState spectral_update(const DdrmState& state, const RVector& x_theta, std::size_t t,
                          const CVector& y, const LinearOperator& op,
                          const NoiseSchedule& schedule, const SamplerConfig& cfg,
                          double sigma_y, const SpectralNoise* noise = nullptr);

/// One simplified transition from state.t to t given x_theta (noiseless only).
DdrmState simplified_update(const DdrmState& state, const RVector& x_theta, std::size_t t,
                            const LinearMeasurement& meas, const NoiseSchedule& schedule,
                            const SamplerConfig& cfg, const RVector* eps = nullptr);

DdrmState spectral_step(const DdrmState& state, std::size_t t, const CVector& y,
                        const LinearOperator& op, const NoiseSchedule& schedule,
                        const SamplerConfig& cfg, const DenoiserHandle& den, ImageShape shape,
                        double sigma_y, const SpectralNoise* noise = nullptr);

DdrmState simplified_step(const DdrmState& state, std::size_t t, const LinearMeasurement& meas,
                          const NoiseSchedule& schedule, const SamplerConfig& cfg,
                          const DenoiserHandle& den, ImageShape shape,
                          const RVector* eps = nullptr);

enum class SamplerMode : std::uint8_t { spectral, simplified };
std::string to_string(SamplerMode mode);

struct SamplerOptions {
  SamplerMode mode = SamplerMode::simplified;
  double sigma_y = 0.0;
  CgOptions cg;
  /// Simplified-mode starting point; defaults to Re(H^+ y).
  std::optional<RVector> x_init;
  /// When non-empty, every iterate is written as step_<k>_t<t>.dprt here.
  std::string dump_dir;
};

struct SamplerResult {
  /// Final iterate mapped to unit range.
  RealImage image;
  std::vector<std::size_t> timesteps;
};

/// Runs the sampler from cfg.t_init to 0. `y` measures the symmetric-range
/// signal. Uses the rng stream (cfg.seed, stream).
SamplerResult run_sampler(const CVector& y, const LinearOperator& op,
                          const NoiseSchedule& schedule, const SamplerConfig& cfg,
                          const DenoiserHandle& den, ImageShape shape,
                          const SamplerOptions& opts = {}, std::uint64_t stream = 0);

nlohmann::json sampler_manifest(const NoiseSchedule& schedule, const SamplerConfig& cfg,
                                SamplerMode mode, const std::string& denoiser_id);

}  // namespace ddrmpr
