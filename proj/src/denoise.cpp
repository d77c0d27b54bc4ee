#include "ddrmpr/denoise.hpp"

#include <algorithm>
#include <cmath>

#include "ddrmpr/errors.hpp"

namespace ddrmpr {

bool DenoiserGeometry::accepts(const RealImage& img) const noexcept {
  return (height == 0 || height == img.height()) && (width == 0 || width == img.width()) &&
         (channels == 0 || channels == img.channels());
}

std::string to_string(DenoiserKind kind) {
  switch (kind) {
    case DenoiserKind::identity: return "identity";
    case DenoiserKind::gaussian: return "gaussian";
    case DenoiserKind::shrinkage: return "shrinkage";
    case DenoiserKind::oracle: return "oracle";
    case DenoiserKind::remote: return "remote";
    case DenoiserKind::custom: return "custom";
  }
  return "unknown";
}

std::vector<RealImage> Denoiser::denoise_batch(std::span<const DenoiseRequest> reqs) const {
  std::vector<RealImage> out;
  out.reserve(reqs.size());
  for (const auto& r : reqs) out.push_back(denoise(r));
  return out;
}

DenoiserHandle::DenoiserHandle(std::string id, DenoiserKind kind, DenoiserGeometry geometry,
                               std::shared_ptr<const Denoiser> impl)
    : id_(std::move(id)), kind_(kind), geometry_(geometry), impl_(std::move(impl)) {
  if (!impl_) throw ArgumentError("DenoiserHandle: missing implementation");
}

void DenoiserHandle::validate(const DenoiseRequest& req) const {
  if (req.x_t.empty()) throw ShapeError("denoise: empty input");
  if (!geometry_.accepts(req.x_t)) {
    throw ShapeError("denoise: input shape does not match the geometry of " + id_);
  }
  if (!(req.alpha_t > 0.0 && req.alpha_t <= 1.0) || !(req.sigma_t >= 0.0) ||
      std::abs(req.alpha_t * (1.0 + req.sigma_t * req.sigma_t) - 1.0) > 1e-9) {
    throw DomainError("denoise: sigma_t and alpha_t must satisfy alpha = 1/(1+sigma^2)");
  }
}

RealImage DenoiserHandle::finish(const DenoiseRequest& req, RealImage out) const {
  if (!out.same_shape(req.x_t)) throw ProtocolError("denoise: " + id_ + " changed the shape");
  if (!out.all_finite()) throw DivergenceError("denoise: " + id_ + " returned non-finite values");
  out.set_range(ValueRange::symmetric);
  out.clamp_to_range();
  return out;
}

RealImage DenoiserHandle::denoise(const DenoiseRequest& req) const {
  validate(req);
  return finish(req, impl_->denoise(req));
}

std::vector<RealImage> DenoiserHandle::denoise_batch(std::span<const DenoiseRequest> reqs) const {
  if (reqs.empty()) return {};
  for (const auto& r : reqs) {
    validate(r);
    if (!r.x_t.same_shape(reqs.front().x_t)) {
      throw ShapeError("denoise_batch: requests must share one shape");
    }
  }
  auto outs = impl_->denoise_batch(reqs);
  if (outs.size() != reqs.size()) throw ProtocolError("denoise_batch: response count mismatch");
  for (std::size_t i = 0; i < outs.size(); ++i) outs[i] = finish(reqs[i], std::move(outs[i]));
  return outs;
}

// ---------------------------------------------------------------------------
// Builtin denoisers

namespace {

std::size_t wrap(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  return static_cast<std::size_t>(((i % m) + m) % m);
}

RealImage rescaled(const DenoiseRequest& req) {
  RealImage z = req.x_t;
  const double inv = 1.0 / std::sqrt(req.alpha_t);
  for (double& v : z.values()) v *= inv;
  return z;
}

template <typename PlaneFn>
RealImage per_channel(const RealImage& img, PlaneFn&& fn) {
  RealImage out = img;
  for (std::size_t c = 0; c < img.channels(); ++c) {
    const RealImage plane = img.channel(c);
    std::vector<double> res = fn(plane.values());
    out.set_channel(c, RealImage(img.height(), img.width(), 1, std::move(res), img.range()));
  }
  return out;
}

class IdentityDenoiser final : public Denoiser {
 public:
  RealImage denoise(const DenoiseRequest& req) const override { return req.x_t; }
};

class GaussianDenoiser final : public Denoiser {
 public:
  GaussianDenoiser(double width_per_sigma, double max_width)
      : width_per_sigma_(width_per_sigma), max_width_(max_width) {}

  RealImage denoise(const DenoiseRequest& req) const override {
    const double stddev = std::min(width_per_sigma_ * req.sigma_t, max_width_);
    const RealImage z = rescaled(req);
    return per_channel(z, [&](std::span<const double> p) {
      return gaussian_blur_circular(p, z.height(), z.width(), stddev);
    });
  }

 private:
  double width_per_sigma_;
  double max_width_;
};

class ShrinkageDenoiser final : public Denoiser {
 public:
  ShrinkageDenoiser(double threshold_scale, std::size_t levels)
      : threshold_scale_(threshold_scale), levels_(levels) {}

  RealImage denoise(const DenoiseRequest& req) const override {
    const double tau = threshold_scale_ * req.sigma_t;
    const RealImage z = rescaled(req);
    return per_channel(z, [&](std::span<const double> p) {
      HaarBands bands = haar_analysis(p, z.height(), z.width(), levels_);
      for (auto& band : bands.details)
        for (double& v : band) v = std::copysign(std::max(std::abs(v) - tau, 0.0), v);
      return haar_synthesis(bands);
    });
  }

 private:
  double threshold_scale_;
  std::size_t levels_;
};

class OracleDenoiser final : public Denoiser {
 public:
  explicit OracleDenoiser(RealImage truth) : truth_(std::move(truth)) {}
  RealImage denoise(const DenoiseRequest&) const override { return truth_; }

 private:
  RealImage truth_;
};

}  // namespace

std::vector<double> gaussian_blur_circular(std::span<const double> plane, std::size_t height,
                                           std::size_t width, double stddev) {
  if (plane.size() != height * width) throw ShapeError("gaussian_blur: plane size mismatch");
  std::vector<double> out(plane.begin(), plane.end());
  if (!(stddev > 1e-6)) return out;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * stddev));
  std::vector<double> kernel(2 * static_cast<std::size_t>(radius) + 1);
  double sum = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * static_cast<double>(k * k) / (stddev * stddev));
    kernel[static_cast<std::size_t>(k + radius)] = w;
    sum += w;
  }
  for (double& w : kernel) w /= sum;

  std::vector<double> tmp(out.size(), 0.0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               out[y * width + wrap(static_cast<std::ptrdiff_t>(x) + k, width)];
      }
      tmp[y * width + x] = acc;
    }
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               tmp[wrap(static_cast<std::ptrdiff_t>(y) + k, height) * width + x];
      }
      out[y * width + x] = acc;
    }
  return out;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

// One undecimated Haar split along rows (axis 1) or columns (axis 0) with
// dilation d: lo[n] = (a[n] + a[n+d]) / sqrt2, hi[n] = (a[n] - a[n+d]) / sqrt2.
void haar_split(const std::vector<double>& a, std::size_t h, std::size_t w, std::size_t d,
                int axis, std::vector<double>& lo, std::vector<double>& hi) {
  lo.assign(a.size(), 0.0);
  hi.assign(a.size(), 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t j = axis == 1 ? y * w + (x + d) % w : ((y + d) % h) * w + x;
      const std::size_t i = y * w + x;
      lo[i] = (a[i] + a[j]) * kInvSqrt2;
      hi[i] = (a[i] - a[j]) * kInvSqrt2;
    }
}

// Inverse of haar_split: a[n] = (lo[n] + hi[n] + lo[n-d] - hi[n-d]) / (2 sqrt2).
std::vector<double> haar_merge(const std::vector<double>& lo, const std::vector<double>& hi,
                               std::size_t h, std::size_t w, std::size_t d, int axis) {
  std::vector<double> a(lo.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t j = axis == 1 ? y * w + (x + w - d % w) % w
                                      : ((y + h - d % h) % h) * w + x;
      const std::size_t i = y * w + x;
      a[i] = (lo[i] + hi[i] + lo[j] - hi[j]) * (0.5 * kInvSqrt2);
    }
  return a;
}

}  // namespace

HaarBands haar_analysis(std::span<const double> plane, std::size_t height, std::size_t width,
                        std::size_t levels) {
  if (plane.size() != height * width) throw ShapeError("haar_analysis: plane size mismatch");
  HaarBands bands{height, width, levels, {plane.begin(), plane.end()}, {}};
  std::vector<double> lo, hi, ll, lh, hl, hh;
  for (std::size_t j = 0; j < levels; ++j) {
    const std::size_t d = std::size_t{1} << j;
    haar_split(bands.approx, height, width, d, 1, lo, hi);
    haar_split(lo, height, width, d, 0, ll, lh);
    haar_split(hi, height, width, d, 0, hl, hh);
    bands.details.push_back(std::move(lh));
    bands.details.push_back(std::move(hl));
    bands.details.push_back(std::move(hh));
    bands.approx = std::move(ll);
  }
  return bands;
}

std::vector<double> haar_synthesis(const HaarBands& bands) {
  const std::size_t h = bands.height, w = bands.width;
  std::vector<double> a = bands.approx;
  for (std::size_t j = bands.levels; j-- > 0;) {
    const std::size_t d = std::size_t{1} << j;
    const auto& lh = bands.details[3 * j];
    const auto& hl = bands.details[3 * j + 1];
    const auto& hh = bands.details[3 * j + 2];
    const auto lo = haar_merge(a, lh, h, w, d, 0);
    const auto hi = haar_merge(hl, hh, h, w, d, 0);
    a = haar_merge(lo, hi, h, w, d, 1);
  }
  return a;
}

DenoiserHandle make_identity_denoiser(DenoiserGeometry geometry) {
  return DenoiserHandle("identity", DenoiserKind::identity, geometry,
                        std::make_shared<IdentityDenoiser>());
}

DenoiserHandle make_gaussian_denoiser(DenoiserGeometry geometry, double width_per_sigma,
                                      double max_width) {
  if (!(width_per_sigma >= 0.0) || !(max_width >= 0.0)) {
    throw ArgumentError("gaussian denoiser: widths must be >= 0");
  }
  return DenoiserHandle("gaussian:" + std::to_string(width_per_sigma), DenoiserKind::gaussian,
                        geometry, std::make_shared<GaussianDenoiser>(width_per_sigma, max_width));
}

DenoiserHandle make_shrinkage_denoiser(DenoiserGeometry geometry, double threshold_scale,
                                       std::size_t levels) {
  if (!(threshold_scale >= 0.0)) throw ArgumentError("shrinkage denoiser: scale must be >= 0");
  return DenoiserHandle("shrinkage:" + std::to_string(threshold_scale), DenoiserKind::shrinkage,
                        geometry, std::make_shared<ShrinkageDenoiser>(threshold_scale, levels));
}

bool oracle_denoiser_available() noexcept {
#ifdef DDRMPR_TEST_DENOISERS
  return true;
#else
  return false;
#endif
}

DenoiserHandle make_oracle_denoiser(RealImage truth) {
  if (!oracle_denoiser_available()) {
    throw CapabilityError("the oracle denoiser is only available in test builds");
  }
  truth.set_range(ValueRange::symmetric);
  DenoiserGeometry g{truth.height(), truth.width(), truth.channels()};
  return DenoiserHandle("oracle", DenoiserKind::oracle, g,
                        std::make_shared<OracleDenoiser>(std::move(truth)));
}

DenoiserHandle make_custom_denoiser(std::string id, DenoiserGeometry geometry,
                                    std::shared_ptr<const Denoiser> impl) {
  return DenoiserHandle(std::move(id), DenoiserKind::custom, geometry, std::move(impl));
}

DenoiserHandle parse_denoiser(const std::string& spec, DenoiserGeometry geometry,
                              std::size_t schedule_T) {
  auto param = [&](std::size_t prefix, double fallback) {
    if (spec.size() <= prefix) return fallback;
    try {
      return std::stod(spec.substr(prefix + 1));
    } catch (const std::exception&) {
      throw ArgumentError("denoiser spec: bad parameter in '" + spec + "'");
    }
  };
  if (spec == "identity") return make_identity_denoiser(geometry);
  if (spec.rfind("gaussian", 0) == 0) return make_gaussian_denoiser(geometry, param(8, 4.0));
  if (spec.rfind("shrinkage", 0) == 0) return make_shrinkage_denoiser(geometry, param(9, 1.0));
  if (spec.rfind("stdio:", 0) == 0 || spec.find(':') != std::string::npos) {
    return make_remote_denoiser(spec, geometry, schedule_T);
  }
  throw ArgumentError("unknown denoiser '" + spec + "'");
}

}  // namespace ddrmpr
