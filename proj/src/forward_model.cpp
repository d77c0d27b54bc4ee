#include "ddrmpr/forward_model.hpp"

#include <cmath>

#include <json.hpp>

#include "ddrmpr/errors.hpp"

namespace ddrmpr {

Geometry Geometry::fourier(std::size_t n_side, std::size_t factor) {
  Geometry g;
  g.kind = Kind::fourier;
  g.n_side = n_side;
  g.factor = factor;
  g.m = (n_side * factor) * (n_side * factor);
  g.n = n_side * n_side;
  return g;
}

Geometry Geometry::general(std::size_t m, std::size_t n) {
  Geometry g;
  g.kind = Kind::general;
  g.m = m;
  g.n = n;
  return g;
}

RVector noisy_intensity(const CVector& ax, double alpha, Rng& rng) {
  RVector out(ax.size());
  for (Eigen::Index i = 0; i < ax.size(); ++i) {
    const double power = std::norm(ax(i));
    // Always draw, so the stream position does not depend on the signal.
    const double z = rng.normal();
    out(i) = power + alpha * std::sqrt(power) * z;
  }
  return out;
}

MeasurementSet simulate(const RealImage& x, const LinearOperator& op, double alpha,
                        std::uint64_t seed) {
  if (!(alpha >= 0.0)) throw ArgumentError("simulate: alpha must be >= 0");
  if (x.channels() != 1) throw ShapeError("simulate: expected a single channel");
  if (x.size() != op.in_dim()) throw ShapeError("simulate: image size != operator in_dim");
  CVector xv(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) xv(static_cast<Eigen::Index>(i)) = x[i];
  const CVector ax = op.apply(xv);

  MeasurementSet out;
  out.alpha = alpha;
  out.seed = seed;
  out.operator_id = op.id();
  out.geometry = Geometry::general(op.out_dim(), op.in_dim());
  out.y.resize(ax.size());
  if (alpha == 0.0) {
    out.y = ax.cwiseAbs();
    return out;
  }
  Rng rng(seed, 0);
  const RVector noisy = noisy_intensity(ax, alpha, rng);
  std::size_t clamped = 0;
  for (Eigen::Index i = 0; i < noisy.size(); ++i) {
    if (noisy(i) < 0.0) ++clamped;
    out.y(i) = std::sqrt(std::max(noisy(i), 0.0));
  }
  out.clamped_fraction = static_cast<double>(clamped) / static_cast<double>(noisy.size());
  return out;
}

std::vector<MeasurementSet> simulate_channels(const RealImage& x, const LinearOperator& op,
                                              double alpha, std::uint64_t seed) {
  std::vector<MeasurementSet> out;
  out.reserve(x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    out.push_back(simulate(x.channel(c), op, alpha, derive_seed(seed, c)));
    out.back().seed = seed;
    out.back().channel = c;
  }
  return out;
}

std::vector<MeasurementSet> simulate_fourier(const RealImage& x, std::size_t factor,
                                             double alpha, std::uint64_t seed) {
  if (x.height() != x.width()) throw ShapeError("simulate_fourier: image must be square");
  auto sets = simulate_channels(x, make_fourier_operator(x.height(), factor), alpha, seed);
  for (auto& s : sets) s.geometry = Geometry::fourier(x.height(), factor);
  return sets;
}

RVector intensity(const MeasurementSet& mset) { return mset.y.array().square(); }

namespace {

nlohmann::json geometry_to_json(const Geometry& g) {
  return {{"kind", g.kind == Geometry::Kind::fourier ? "fourier" : "general"},
          {"n_side", g.n_side},
          {"factor", g.factor},
          {"m", g.m},
          {"n", g.n}};
}

Geometry geometry_from_json(const nlohmann::json& j) {
  Geometry g;
  g.kind = j.at("kind").get<std::string>() == "fourier" ? Geometry::Kind::fourier
                                                         : Geometry::Kind::general;
  g.n_side = j.at("n_side").get<std::size_t>();
  g.factor = j.at("factor").get<std::size_t>();
  g.m = j.at("m").get<std::size_t>();
  g.n = j.at("n").get<std::size_t>();
  return g;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  std::filesystem::path p = stem;
  p += suffix;
  return p;
}

}  // namespace

void save_measurement(const std::filesystem::path& stem, const MeasurementSet& mset) {
  Tensor t;
  t.dtype = Tensor::DType::f32_real;
  if (mset.geometry.kind == Geometry::Kind::fourier) {
    const auto side = static_cast<std::uint32_t>(mset.geometry.n_side * mset.geometry.factor);
    t.dims = {side, side};
  } else {
    t.dims = {static_cast<std::uint32_t>(mset.y.size())};
  }
  t.values.assign(mset.y.begin(), mset.y.end());
  write_dprt(with_suffix(stem, ".dprt"), t);

  nlohmann::json sidecar = {{"alpha", mset.alpha},
                            {"seed", mset.seed},
                            {"channel", mset.channel},
                            {"sigma_y", mset.sigma_y},
                            {"operator_id", mset.operator_id},
                            {"geometry", geometry_to_json(mset.geometry)},
                            {"clamped_fraction", mset.clamped_fraction}};
  write_text_atomic(with_suffix(stem, ".json"), sidecar.dump(2) + "\n");
}

MeasurementSet load_measurement(const std::filesystem::path& stem) {
  MeasurementSet mset;
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(read_text(with_suffix(stem, ".json")));
    mset.alpha = sidecar.at("alpha").get<double>();
    mset.seed = sidecar.at("seed").get<std::uint64_t>();
    mset.channel = sidecar.value("channel", std::size_t{0});
    mset.sigma_y = sidecar.value("sigma_y", 0.0);
    mset.operator_id = sidecar.at("operator_id").get<std::string>();
    mset.geometry = geometry_from_json(sidecar.at("geometry"));
    mset.clamped_fraction = sidecar.value("clamped_fraction", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("measurement sidecar " + stem.string() + ".json: " + e.what());
  }
  const Tensor t = read_dprt(with_suffix(stem, ".dprt"));
  if (t.dtype != Tensor::DType::f32_real) throw FormatError("measurement tensor must be real");
  mset.y.resize(static_cast<Eigen::Index>(t.values.size()));
  for (std::size_t i = 0; i < t.values.size(); ++i) mset.y(static_cast<Eigen::Index>(i)) = t.values[i];
  if (mset.y.size() != static_cast<Eigen::Index>(mset.geometry.m)) {
    throw ShapeError("measurement length does not match its recorded geometry");
  }
  if ((mset.y.array() < 0.0).any()) throw FormatError("measurement magnitudes must be >= 0");
  return mset;
}

}  // namespace ddrmpr
