#include "ddrmpr/ddrm_core.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "ddrmpr/errors.hpp"
#include "ddrmpr/tensor_io.hpp"

namespace ddrmpr {

using nlohmann::json;

double alpha_from_sigma(double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("sigma must be finite and >= 0");
  return 1.0 / (1.0 + sigma * sigma);
}

double sigma_from_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must be in (0, 1]");
  return std::sqrt((1.0 - alpha) / alpha);
}

// ---------------------------------------------------------------------------
// NoiseSchedule

NoiseSchedule::NoiseSchedule(std::vector<double> sigmas, std::string kind)
    : sigmas_(std::move(sigmas)), kind_(std::move(kind)) {
  alphas_.reserve(sigmas_.size());
  for (double s : sigmas_) alphas_.push_back(alpha_from_sigma(s));
}

NoiseSchedule NoiseSchedule::from_sigmas(std::vector<double> sigmas, std::string kind) {
  if (sigmas.size() < 2) throw ScheduleError("schedule needs sigma_0 and at least one step");
  if (sigmas.front() != 0.0) throw ScheduleError("schedule must start at sigma_0 = 0");
  for (std::size_t t = 1; t < sigmas.size(); ++t) {
    if (!std::isfinite(sigmas[t]) || !(sigmas[t] > sigmas[t - 1])) {
      throw ScheduleError("schedule sigmas must be finite and strictly increasing (t = " +
                          std::to_string(t) + ")");
    }
  }
  return NoiseSchedule(std::move(sigmas), std::move(kind));
}

std::string NoiseSchedule::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double s : sigmas_) {
    unsigned char b[sizeof(double)];
    std::memcpy(b, &s, sizeof b);
    for (unsigned char c : b) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

json NoiseSchedule::to_json() const {
  return json{{"kind", kind_}, {"T", T()}, {"hash", hash()}, {"sigmas", sigmas_}};
}

NoiseSchedule NoiseSchedule::from_json(const json& j) {
  try {
    auto s = from_sigmas(j.at("sigmas").get<std::vector<double>>(), j.value("kind", "custom"));
    if (j.contains("hash") && j.at("hash").get<std::string>() != s.hash()) {
      throw ScheduleError("schedule hash mismatch");
    }
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("schedule json: ") + e.what());
  }
}

NoiseSchedule schedule_linear_vp(std::size_t T, double sigma_max) {
  if (T < 1) throw ScheduleError("schedule_linear_vp: T must be >= 1");
  if (!(sigma_max > 0.0) || !std::isfinite(sigma_max)) {
    throw ScheduleError("schedule_linear_vp: sigma_max must be > 0");
  }
  constexpr double kRatio = 200.0;
  auto shape = [&](std::size_t t) {
    return T == 1 ? 1.0 : 1.0 + (kRatio - 1.0) * static_cast<double>(t - 1) /
                                   static_cast<double>(T - 1);
  };
  auto log_alpha_bar = [&](double s) {
    double acc = 0.0;
    for (std::size_t t = 1; t <= T; ++t) acc += std::log1p(-s * shape(t));
    return acc;
  };
  const double target = -std::log1p(sigma_max * sigma_max);
  double lo = 0.0, hi = 1.0 / shape(T);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (log_alpha_bar(mid) > target ? lo : hi) = mid;
  }
  const double s = 0.5 * (lo + hi);
  std::vector<double> sigmas(T + 1, 0.0);
  double acc = 0.0;
  for (std::size_t t = 1; t <= T; ++t) {
    acc += std::log1p(-s * shape(t));
    sigmas[t] = std::sqrt(std::expm1(-acc));
  }
  sigmas[T] = sigma_max;  // bisection residue is ~1e-15 relative
  return NoiseSchedule::from_sigmas(std::move(sigmas), "linear_vp");
}

NoiseSchedule schedule_geometric(std::size_t T, double sigma_min, double sigma_max) {
  if (T < 1) throw ScheduleError("schedule_geometric: T must be >= 1");
  if (!(sigma_min > 0.0) || !(sigma_max >= sigma_min) || (T > 1 && sigma_max == sigma_min)) {
    throw ScheduleError("schedule_geometric: need 0 < sigma_min < sigma_max");
  }
  std::vector<double> sigmas(T + 1, 0.0);
  for (std::size_t t = 1; t <= T; ++t) {
    const double f = T == 1 ? 1.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
    sigmas[t] = sigma_min * std::pow(sigma_max / sigma_min, f);
  }
  return NoiseSchedule::from_sigmas(std::move(sigmas), "geometric");
}

// ---------------------------------------------------------------------------
// SamplerConfig

double mixing_coefficient(NoiseMixing mixing, double eta) {
  return mixing == NoiseMixing::linear ? 1.0 - eta : std::sqrt(std::max(0.0, 1.0 - eta * eta));
}

void SamplerConfig::validate(const NoiseSchedule& schedule) const {
  if (!(eta > 0.0 && eta <= 1.0)) throw ArgumentError("eta must be in (0, 1]");
  if (!(eta_b >= 0.0 && eta_b <= 1.0)) throw ArgumentError("eta_b must be in [0, 1]");
  if (steps < 1) throw ArgumentError("steps must be >= 1");
  if (steps > t_init) throw ArgumentError("steps must not exceed t_init");
  if (t_init > schedule.T()) throw ArgumentError("t_init exceeds the schedule length T");
  if (n_avg < 1) throw ArgumentError("n_avg must be >= 1");
}

std::vector<std::size_t> SamplerConfig::timesteps() const {
  std::vector<std::size_t> ts(steps + 1);
  for (std::size_t j = 0; j <= steps; ++j) {
    const double v = static_cast<double>(t_init) * static_cast<double>(steps - j) /
                     static_cast<double>(steps);
    ts[j] = static_cast<std::size_t>(std::llround(v));
  }
  return ts;
}

json SamplerConfig::to_json() const {
  return json{{"eta", eta},     {"eta_b", eta_b}, {"steps", steps},
              {"t_init", t_init}, {"n_avg", n_avg}, {"seed", seed},
              {"mixing", mixing == NoiseMixing::linear ? "linear" : "exact"}};
}

SamplerConfig SamplerConfig::from_json(const json& j) {
  SamplerConfig c;
  try {
    c.eta = j.at("eta").get<double>();
    c.eta_b = j.at("eta_b").get<double>();
    c.steps = j.at("steps").get<std::size_t>();
    c.t_init = j.at("t_init").get<std::size_t>();
    c.n_avg = j.value("n_avg", std::size_t{1});
    c.seed = j.value("seed", std::uint64_t{0});
    const std::string mix = j.value("mixing", "linear");
    if (mix != "linear" && mix != "exact") throw FormatError("unknown mixing '" + mix + "'");
    c.mixing = mix == "linear" ? NoiseMixing::linear : NoiseMixing::exact;
  } catch (const json::exception& e) {
    throw FormatError(std::string("sampler config json: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Elementary pieces

RVector epsilon_estimate(const RVector& x_next, const RVector& x_theta, double alpha_next) {
  if (!(alpha_next > 0.0 && alpha_next < 1.0)) {
    throw DomainError("epsilon_estimate: alpha must be in (0, 1)");
  }
  if (x_next.size() != x_theta.size()) throw ShapeError("epsilon_estimate: length mismatch");
  return (x_next - std::sqrt(alpha_next) * x_theta) / std::sqrt(1.0 - alpha_next);
}

RealImage epsilon_estimate(const RealImage& x_next, const RealImage& x_theta, double alpha_next) {
  if (!x_next.same_shape(x_theta)) throw ShapeError("epsilon_estimate: shape mismatch");
  const auto a = Eigen::Map<const RVector>(x_next.values().data(),
                                           static_cast<Eigen::Index>(x_next.size()));
  const auto b = Eigen::Map<const RVector>(x_theta.values().data(),
                                           static_cast<Eigen::Index>(x_theta.size()));
  const RVector e = epsilon_estimate(RVector(a), RVector(b), alpha_next);
  return RealImage(x_next.height(), x_next.width(), x_next.channels(),
                   std::vector<double>(e.data(), e.data() + e.size()), ValueRange::symmetric);
}

namespace {

RVector normal_vector(std::size_t n, Rng& rng) {
  RVector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v;
}

void check_finite(const RVector& x, const char* who) {
  if (!x.allFinite()) throw DivergenceError(std::string(who) + ": non-finite iterate");
}

const Svd& require_svd(const LinearOperator& op, const char* who) {
  const Svd* svd = op.svd();
  if (!svd) throw CapabilityError(std::string(who) + ": operator has no materialized SVD");
  return *svd;
}

// ybar = Sigma^+ U^H y over all n spectral indices.
CVector spectral_measurement(const Svd& svd, const CVector& y, std::size_t n) {
  CVector ybar = CVector::Zero(static_cast<Eigen::Index>(n));
  const CVector uy = svd.u.adjoint() * y;
  for (Eigen::Index i = 0; i < svd.s.size(); ++i)
    if (svd.s(i) > 0.0) ybar(i) = uy(i) / svd.s(i);
  return ybar;
}

}  // namespace

RVector forward_diffuse(const RVector& x0, double alpha, Rng& rng) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("forward_diffuse: alpha must be in (0, 1]");
  return std::sqrt(alpha) * x0 +
         std::sqrt(1.0 - alpha) * normal_vector(static_cast<std::size_t>(x0.size()), rng);
}

LinearMeasurement LinearMeasurement::make(LinearOperator op, CVector y, CgOptions cg) {
  if (static_cast<std::size_t>(y.size()) != op.out_dim()) {
    throw ShapeError("LinearMeasurement: y length != out_dim");
  }
  cg.validate();
  RVector py = pinv_apply(op, y, cg).real();
  return LinearMeasurement{std::move(op), std::move(y), std::move(py), cg};
}

RVector LinearMeasurement::consistent(const RVector& x) const {
  if (static_cast<std::size_t>(x.size()) != op.in_dim()) {
    throw ShapeError("LinearMeasurement: x length != in_dim");
  }
  const CVector xc = x.cast<Complex>();
  const CVector r = y - op.apply(xc);
  return x + pinv_apply(op, r, cg).real();
}

RVector recombine(const RVector& x_next, const RVector& x_theta, const RVector& x_prime,
                  const RVector& eps, double alpha_t, double alpha_next,
                  const SamplerConfig& cfg) {
  const RVector eps_theta = epsilon_estimate(x_next, x_theta, alpha_next);
  if (eps.size() != x_theta.size()) throw ShapeError("recombine: noise length mismatch");
  const double mix = mixing_coefficient(cfg.mixing, cfg.eta);
  RVector signal = (1.0 - cfg.eta_b) * x_theta;
  if (cfg.eta_b > 0.0) {
    if (x_prime.size() != x_theta.size()) throw ShapeError("recombine: x_prime length mismatch");
    signal += cfg.eta_b * x_prime;
  }
  return std::sqrt(alpha_t) * signal +
         std::sqrt(1.0 - alpha_t) * (cfg.eta * eps + mix * eps_theta);
}

RVector denoise_vector(const DenoiserHandle& den, const RVector& x, ImageShape shape,
                       const NoiseSchedule& schedule, std::size_t t) {
  if (static_cast<std::size_t>(x.size()) != shape.size()) {
    throw ShapeError("denoise_vector: iterate length does not match the image shape");
  }
  DenoiseRequest req{RealImage(shape.height, shape.width, shape.channels,
                               std::vector<double>(x.data(), x.data() + x.size()),
                               ValueRange::symmetric),
                     t, schedule.sigma(t), schedule.alpha(t)};
  const RealImage out = den.denoise(req);
  return Eigen::Map<const RVector>(out.values().data(), static_cast<Eigen::Index>(out.size()));
}

// ---------------------------------------------------------------------------
// Initialization

DdrmState spectral_init(const CVector& y, const LinearOperator& op,
                        const NoiseSchedule& schedule, std::size_t t, double sigma_y, Rng rng) {
  const Svd& svd = require_svd(op, "spectral_init");
  if (!(sigma_y >= 0.0)) throw ArgumentError("spectral_init: sigma_y must be >= 0");
  const std::size_t n = op.in_dim();
  const RVector s = svd.spectral_values();
  const double sig = schedule.sigma(t);
  const CVector ybar = spectral_measurement(svd, y, n);

  DdrmState st{RVector(), t, std::move(rng), RVector()};
  st.last_noise = normal_vector(n, st.rng);
  const CVector eps_bar = svd.v.adjoint() * st.last_noise.cast<Complex>();
  CVector xbar(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < xbar.size(); ++i) {
    if (s(i) > 0.0) {
      const double var = sig * sig - (sigma_y * sigma_y) / (s(i) * s(i));
      if (var < 0.0) {
        throw ScheduleError("spectral_init: sigma_T^2 < sigma_y^2 / s_i^2 at index " +
                            std::to_string(i));
      }
      xbar(i) = ybar(i) + std::sqrt(var) * eps_bar(i);
    } else {
      xbar(i) = sig * eps_bar(i);
    }
  }
  st.x = std::sqrt(schedule.alpha(t)) * (svd.v * xbar).real();
  check_finite(st.x, "spectral_init");
  return st;
}

DdrmState simplified_init(const RVector& x_init, const NoiseSchedule& schedule, std::size_t t,
                          Rng rng) {
  DdrmState st{RVector(), t, rng, RVector()};
  st.last_noise = normal_vector(static_cast<std::size_t>(x_init.size()), st.rng);
  st.x = std::sqrt(schedule.alpha(t)) * x_init + std::sqrt(1.0 - schedule.alpha(t)) * st.last_noise;
  check_finite(st.x, "simplified_init");
  return st;
}

// ---------------------------------------------------------------------------
// Transitions

namespace {

void check_transition(const DdrmState& state, std::size_t t, const NoiseSchedule& schedule) {
  if (state.t > schedule.T() || t >= state.t) {
    throw ArgumentError("sampler transition must go from t+1 down to t within the schedule");
  }
}

}  // namespace

DdrmState spectral_update(const DdrmState& state, const RVector& x_theta, std::size_t t,
                          const CVector& y, const LinearOperator& op,
                          const NoiseSchedule& schedule, const SamplerConfig& cfg,
                          double sigma_y, const SpectralNoise* noise) {
  check_transition(state, t, schedule);
  const Svd& svd = require_svd(op, "spectral_step");
  const std::size_t n = op.in_dim();
  if (static_cast<std::size_t>(x_theta.size()) != n || static_cast<std::size_t>(state.x.size()) != n) {
    throw ShapeError("spectral_step: iterate length != in_dim");
  }
  const RVector s = svd.spectral_values();
  const double sig_t = schedule.sigma(t), sig_next = schedule.sigma(state.t);
  const double a_t = schedule.alpha(t), a_next = schedule.alpha(state.t);
  const double mix = std::sqrt(std::max(0.0, 1.0 - cfg.eta * cfg.eta));

  DdrmState out{RVector(), t, state.rng, RVector()};
  RVector eps, eps_range;
  if (noise) {
    if (static_cast<std::size_t>(noise->eps.size()) != n ||
        static_cast<std::size_t>(noise->eps_range.size()) != n) {
      throw ShapeError("spectral_step: explicit noise length != in_dim");
    }
    eps = noise->eps;
    eps_range = noise->eps_range;
  } else {
    eps = normal_vector(n, out.rng);
    eps_range = normal_vector(n, out.rng);
  }
  const CMatrix& V = svd.v;
  const CVector eb = V.adjoint() * eps.cast<Complex>();
  const CVector eb_range = V.adjoint() * eps_range.cast<Complex>();
  const CVector xb_theta = V.adjoint() * x_theta.cast<Complex>();
  const CVector xb_next = V.adjoint() * (state.x / std::sqrt(a_next)).cast<Complex>();
  const CVector ybar = spectral_measurement(svd, y, n);

  CVector xb(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < xb.size(); ++i) {
    if (s(i) == 0.0) {
      xb(i) = xb_theta(i) + mix * sig_t * (xb_next(i) - xb_theta(i)) / sig_next +
              cfg.eta * sig_t * eb(i);
    } else if (sig_t < sigma_y / s(i)) {
      xb(i) = xb_theta(i) + mix * sig_t * (ybar(i) - xb_theta(i)) / (sigma_y / s(i)) +
              cfg.eta * sig_t * eb(i);
    } else {
      const double ratio = sigma_y / s(i);
      const double var = sig_t * sig_t - ratio * ratio * cfg.eta_b * cfg.eta_b;
      xb(i) = (1.0 - cfg.eta_b) * xb_theta(i) + cfg.eta_b * ybar(i) +
              std::sqrt(std::max(0.0, var)) * eb_range(i);
    }
  }
  out.x = std::sqrt(a_t) * (V * xb).real();
  out.last_noise = std::move(eps);
  check_finite(out.x, "spectral_step");
  return out;
}

DdrmState simplified_update(const DdrmState& state, const RVector& x_theta, std::size_t t,
                            const LinearMeasurement& meas, const NoiseSchedule& schedule,
                            const SamplerConfig& cfg, const RVector* eps) {
  check_transition(state, t, schedule);
  DdrmState out{RVector(), t, state.rng, RVector()};
  if (eps) {
    if (eps->size() != x_theta.size()) throw ShapeError("simplified_step: noise length mismatch");
    out.last_noise = *eps;
  } else {
    out.last_noise = normal_vector(static_cast<std::size_t>(x_theta.size()), out.rng);
  }
  const RVector x_prime = cfg.eta_b > 0.0 ? meas.consistent(x_theta) : RVector();
  out.x = recombine(state.x, x_theta, x_prime, out.last_noise, schedule.alpha(t),
                    schedule.alpha(state.t), cfg);
  check_finite(out.x, "simplified_step");
  return out;
}

DdrmState spectral_step(const DdrmState& state, std::size_t t, const CVector& y,
                        const LinearOperator& op, const NoiseSchedule& schedule,
                        const SamplerConfig& cfg, const DenoiserHandle& den, ImageShape shape,
                        double sigma_y, const SpectralNoise* noise) {
  const RVector x_theta = denoise_vector(den, state.x, shape, schedule, state.t);
  return spectral_update(state, x_theta, t, y, op, schedule, cfg, sigma_y, noise);
}

DdrmState simplified_step(const DdrmState& state, std::size_t t, const LinearMeasurement& meas,
                          const NoiseSchedule& schedule, const SamplerConfig& cfg,
                          const DenoiserHandle& den, ImageShape shape, const RVector* eps) {
  const RVector x_theta = denoise_vector(den, state.x, shape, schedule, state.t);
  return simplified_update(state, x_theta, t, meas, schedule, cfg, eps);
}

// ---------------------------------------------------------------------------
// Driver

std::string to_string(SamplerMode mode) {
  return mode == SamplerMode::spectral ? "spectral" : "simplified";
}

namespace {

RealImage as_image(const RVector& x, ImageShape shape) {
  return RealImage(shape.height, shape.width, shape.channels,
                   std::vector<double>(x.data(), x.data() + x.size()), ValueRange::symmetric);
}

void dump_iterate(const std::string& dir, std::size_t k, const DdrmState& st, ImageShape shape) {
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) /
                    ("step_" + std::to_string(k) + "_t" + std::to_string(st.t) + ".dprt");
  write_dprt(path, to_tensor(as_image(st.x, shape)));
}

}  // namespace

SamplerResult run_sampler(const CVector& y, const LinearOperator& op,
                          const NoiseSchedule& schedule, const SamplerConfig& cfg,
                          const DenoiserHandle& den, ImageShape shape,
                          const SamplerOptions& opts, std::uint64_t stream) {
  cfg.validate(schedule);
  if (shape.size() != op.in_dim()) throw ShapeError("run_sampler: image shape != operator in_dim");
  if (opts.mode == SamplerMode::simplified && opts.sigma_y != 0.0) {
    throw ArgumentError("run_sampler: the simplified sampler is noiseless (sigma_y must be 0)");
  }
  const auto ts = cfg.timesteps();
  Rng rng(cfg.seed, stream);
  DdrmState st;
  std::optional<LinearMeasurement> meas;
  if (opts.mode == SamplerMode::spectral) {
    st = spectral_init(y, op, schedule, ts.front(), opts.sigma_y, rng);
  } else {
    meas = LinearMeasurement::make(op, y, opts.cg);
    const RVector& x0 = opts.x_init ? *opts.x_init : meas->pinv_y;
    if (static_cast<std::size_t>(x0.size()) != op.in_dim()) {
      throw ShapeError("run_sampler: x_init length != in_dim");
    }
    st = simplified_init(x0, schedule, ts.front(), rng);
  }
  if (!opts.dump_dir.empty()) dump_iterate(opts.dump_dir, 0, st, shape);
  for (std::size_t k = 1; k < ts.size(); ++k) {
    st = opts.mode == SamplerMode::spectral
             ? spectral_step(st, ts[k], y, op, schedule, cfg, den, shape, opts.sigma_y)
             : simplified_step(st, ts[k], *meas, schedule, cfg, den, shape);
    if (!opts.dump_dir.empty()) dump_iterate(opts.dump_dir, k, st, shape);
  }
  return SamplerResult{to_unit(as_image(st.x, shape)), ts};
}

json sampler_manifest(const NoiseSchedule& schedule, const SamplerConfig& cfg, SamplerMode mode,
                      const std::string& denoiser_id) {
  json steps = json::array();
  for (std::size_t t : cfg.timesteps()) {
    steps.push_back(json{{"t", t}, {"sigma", schedule.sigma(t)}});
  }
  return json{{"schedule_hash", schedule.hash()},
              {"schedule", schedule.to_json()},
              {"cfg", cfg.to_json()},
              {"seed", cfg.seed},
              {"mode", to_string(mode)},
              {"denoiser_id", denoiser_id},
              {"steps", steps}};
}

}  // namespace ddrmpr
