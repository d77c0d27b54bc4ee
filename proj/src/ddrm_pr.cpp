#include "ddrmpr/ddrm_pr.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "ddrmpr/errors.hpp"
#include "ddrmpr/parallel.hpp"

namespace ddrmpr {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

const char* method_name(ApMethod m) {
  switch (m) {
    case ApMethod::hio: return "hio";
    case ApMethod::er: return "er";
    case ApMethod::general: return "general";
  }
  return "hio";
}

ApMethod method_from(const std::string& s) {
  if (s == "hio") return ApMethod::hio;
  if (s == "er") return ApMethod::er;
  if (s == "general") return ApMethod::general;
  throw FormatError("unknown AP method '" + s + "'");
}

RVector plane_vector(const RealImage& img) {
  return Eigen::Map<const RVector>(img.values().data(), static_cast<Eigen::Index>(img.size()));
}

RealImage vector_image(const RVector& v, std::size_t h, std::size_t w, std::size_t c,
                       ValueRange range) {
  if (static_cast<std::size_t>(v.size()) != h * w * c) {
    throw ShapeError("vector length does not match the image shape");
  }
  return RealImage(h, w, c, std::vector<double>(v.data(), v.data() + v.size()), range);
}

}  // namespace

void PrPipelineConfig::validate(const NoiseSchedule& schedule) const {
  sampler.validate(schedule);
  if (hio_inner_iters < 1) throw ArgumentError("hio_inner_iters must be >= 1");
  random_init.validate();
  if (!(ap.beta > 0.0 && ap.beta <= 1.0)) throw ArgumentError("AP beta must be in (0, 1]");
  ap.cg.validate();
}

json PrPipelineConfig::to_json() const {
  return json{
      {"sampler", sampler.to_json()},
      {"hio_inner_iters", hio_inner_iters},
      {"random_init",
       {{"num_inits", random_init.num_inits},
        {"short_iters", random_init.short_iters},
        {"final_iters", random_init.final_iters},
        {"seed", random_init.seed}}},
      {"ap",
       {{"beta", ap.beta},
        {"method", method_name(ap.method)},
        {"residual", ap.residual == ResidualKind::magnitude ? "magnitude" : "intensity"},
        {"cg",
         {{"max_iters", ap.cg.max_iters},
          {"tol", ap.cg.tol},
          {"regularizer", ap.cg.regularizer}}}}},
      {"inner_init", inner_init == InnerInit::denoised ? "denoised" : "previous_iterate"},
      {"nonneg", nonneg},
      {"align_samples", align_samples}};
}

PrPipelineConfig PrPipelineConfig::from_json(const json& j) {
  PrPipelineConfig c;
  try {
    c.sampler = SamplerConfig::from_json(j.at("sampler"));
    c.hio_inner_iters = j.at("hio_inner_iters").get<std::size_t>();
    const json& ri = j.at("random_init");
    c.random_init.num_inits = ri.at("num_inits").get<std::size_t>();
    c.random_init.short_iters = ri.at("short_iters").get<std::size_t>();
    c.random_init.final_iters = ri.at("final_iters").get<std::size_t>();
    c.random_init.seed = ri.at("seed").get<std::uint64_t>();
    const json& ap = j.at("ap");
    c.ap.beta = ap.at("beta").get<double>();
    c.ap.method = method_from(ap.at("method").get<std::string>());
    const std::string res = ap.at("residual").get<std::string>();
    if (res != "magnitude" && res != "intensity") throw FormatError("unknown residual '" + res + "'");
    c.ap.residual = res == "magnitude" ? ResidualKind::magnitude : ResidualKind::intensity;
    c.ap.cg.max_iters = ap.at("cg").at("max_iters").get<std::size_t>();
    c.ap.cg.tol = ap.at("cg").at("tol").get<double>();
    c.ap.cg.regularizer = ap.at("cg").at("regularizer").get<double>();
    const std::string ii = j.at("inner_init").get<std::string>();
    if (ii != "denoised" && ii != "previous_iterate") {
      throw FormatError("unknown inner_init '" + ii + "'");
    }
    c.inner_init = ii == "denoised" ? InnerInit::denoised : InnerInit::previous_iterate;
    c.nonneg = j.at("nonneg").get<bool>();
    c.align_samples = j.at("align_samples").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("pipeline config json: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Problems

void PrProblem::validate() const {
  if (y.empty()) throw ArgumentError("PrProblem: no channels");
  for (const auto& yc : y) {
    if (static_cast<std::size_t>(yc.size()) != op.out_dim()) {
      throw ShapeError("PrProblem: measurement length != operator out_dim");
    }
    if ((yc.array() < 0.0).any() || !yc.allFinite()) {
      throw DomainError("PrProblem: magnitudes must be finite and non-negative");
    }
  }
  if (grid_h * grid_w != op.in_dim()) throw ShapeError("PrProblem: grid size != operator in_dim");
  if (image_h < 1 || image_w < 1 || image_h > grid_h || image_w > grid_w) {
    throw ShapeError("PrProblem: image block does not fit the grid");
  }
  if (constraints && (constraints->support.height() != grid_h ||
                      constraints->support.width() != grid_w)) {
    throw ShapeError("PrProblem: constraint support does not match the grid");
  }
}

RealImage PrProblem::embed(const RealImage& plane) const {
  if (plane.height() != image_h || plane.width() != image_w || plane.channels() != 1) {
    throw ShapeError("PrProblem::embed: expected one image-sized plane");
  }
  if (grid_h == image_h && grid_w == image_w) return plane;
  RealImage g(grid_h, grid_w, 1, plane.range());
  for (std::size_t y = 0; y < image_h; ++y)
    for (std::size_t x = 0; x < image_w; ++x) g.at(y, x) = plane.at(y, x);
  return g;
}

RealImage PrProblem::extract(const RealImage& grid_plane) const {
  if (grid_plane.height() != grid_h || grid_plane.width() != grid_w) {
    throw ShapeError("PrProblem::extract: expected one grid-sized plane");
  }
  if (grid_h == image_h && grid_w == image_w) return grid_plane;
  return crop_top_left(grid_plane, image_h, image_w);
}

PrProblem fourier_problem(const std::vector<MeasurementSet>& msets, bool nonneg) {
  if (msets.empty()) throw ArgumentError("fourier_problem: no measurement sets");
  const Geometry g = msets.front().geometry;
  if (g.kind != Geometry::Kind::fourier) throw ArgumentError("fourier_problem: geometry is not fourier");
  std::vector<RVector> y;
  for (const auto& m : msets) {
    if (!(m.geometry == g)) throw ShapeError("fourier_problem: channels differ in geometry");
    y.push_back(m.y);
  }
  const std::size_t big = g.n_side * g.factor;
  PrProblem p{std::move(y), make_fourier_operator(big, 1),
              ConstraintSet::fourier(g.n_side, g.factor, nonneg), big, big, g.n_side, g.n_side};
  p.validate();
  return p;
}

PrProblem general_problem(std::vector<RVector> y, LinearOperator op, std::size_t image_h,
                          std::size_t image_w, std::optional<ConstraintSet> constraints) {
  std::size_t gh = image_h, gw = image_w;
  if (constraints) {
    gh = constraints->support.height();
    gw = constraints->support.width();
  }
  PrProblem p{std::move(y), std::move(op), std::move(constraints), gh, gw, image_h, image_w};
  p.validate();
  return p;
}

ApResult ap_inner(const PrProblem& p, const RVector& y, const RealImage& grid_init,
                  std::size_t iters, const ApOptions& opts) {
  if (p.constraints) return ap_run(y, p.op, grid_init, iters, *p.constraints, opts);
  return ap_general_run(y, p.op, grid_init, iters, std::nullopt, opts);
}

std::vector<RealImage> pr_random_init(const PrProblem& p, const PrPipelineConfig& cfg,
                                      std::vector<RandomInitResult>* details) {
  p.validate();
  ApOptions opts = cfg.ap;
  opts.record_trace = false;
  // Without space-domain constraints the search runs on the full grid with
  // only the measurement projection active.
  ConstraintSet cons = p.constraints ? *p.constraints : ConstraintSet::full(p.grid_h, p.grid_w, false);
  if (!p.constraints) opts.method = ApMethod::general;
  std::vector<RealImage> out;
  for (std::size_t c = 0; c < p.channels(); ++c) {
    RandomInitParams params = cfg.random_init;
    params.seed = derive_seed(cfg.random_init.seed, c);
    RandomInitResult r = random_init(p.y[c], p.op, params, cons, opts);
    out.push_back(p.extract(r.estimate));
    out.back().set_range(ValueRange::unit);
    if (details) details->push_back(std::move(r));
  }
  return out;
}

RVector to_vp(const RVector& unit) { return 2.0 * unit.array() - 1.0; }

RVector from_vp(const RVector& vp) {
  return ((vp.array() + 1.0) * 0.5).cwiseMax(0.0).cwiseMin(1.0);
}

RVector pr_denoise(const DenoiserHandle& den, const RVector& x, ImageShape shape,
                   const NoiseSchedule& schedule, std::size_t t) {
  if (shape.channels == 1 && den.geometry().channels == 3) {
    const RealImage gray = vector_image(x, shape.height, shape.width, 1, ValueRange::symmetric);
    const RealImage planes[3] = {gray, gray, gray};
    const RealImage rgb = RealImage::from_channels(planes);
    const RVector out =
        denoise_vector(den, plane_vector(rgb), {shape.height, shape.width, 3}, schedule, t);
    RVector mean(x.size());
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
      mean(i) = (out(3 * i) + out(3 * i + 1) + out(3 * i + 2)) / 3.0;
    }
    return mean;
  }
  return denoise_vector(den, x, shape, schedule, t);
}

RVector pr_consistent(const PrProblem& p, const RVector& x_theta, const RVector& x_next,
                      const std::vector<RealImage>& cached_init, const PrPipelineConfig& cfg) {
  const std::size_t h = p.image_h, w = p.image_w, C = p.channels();
  if (cached_init.size() != C) throw ShapeError("pr_consistent: one cached init per channel");
  const RealImage f = vector_image(x_theta, h, w, C, ValueRange::symmetric);
  const RealImage prev = vector_image(x_next, h, w, C, ValueRange::symmetric);
  ApOptions opts = cfg.ap;
  opts.record_trace = false;
  std::vector<RealImage> planes;
  planes.reserve(C);
  for (std::size_t c = 0; c < C; ++c) {
    const RVector fc = plane_vector(f.channel(c));
    const RealImage u = vector_image(from_vp(fc), h, w, 1, ValueRange::unit);
    const RealImage grid_u = p.embed(u);
    const RVector z = p.op.apply(plane_vector(grid_u).cast<Complex>()).cwiseAbs();
    const RealImage init =
        cfg.inner_init == InnerInit::denoised
            ? grid_u
            : p.embed(vector_image(from_vp(plane_vector(prev.channel(c))), h, w, 1,
                                   ValueRange::unit));
    const ApResult ap = ap_inner(p, z, init, cfg.hio_inner_iters, opts);
    const RVector hio = plane_vector(p.extract(ap.estimate));
    const RVector ri = plane_vector(cached_init[c]);
    const RVector xc = fc - to_vp(hio) + to_vp(ri);
    planes.push_back(vector_image(xc, h, w, 1, ValueRange::symmetric));
  }
  return plane_vector(RealImage::from_channels(planes));
}

DdrmState ddrm_pr_step(const DdrmState& state, std::size_t t, const PrProblem& p,
                       const PrPipelineConfig& cfg, const NoiseSchedule& schedule,
                       const DenoiserHandle& den, const std::vector<RealImage>& cached_init) {
  if (t >= state.t || state.t > schedule.T()) {
    throw ArgumentError("ddrm_pr_step must go from t+1 down to t within the schedule");
  }
  const ImageShape shape{p.image_h, p.image_w, p.channels()};
  const RVector x_theta = pr_denoise(den, state.x, shape, schedule, state.t);
  DdrmState out{RVector(), t, state.rng, RVector(x_theta.size())};
  for (Eigen::Index i = 0; i < out.last_noise.size(); ++i) out.last_noise(i) = out.rng.normal();
  const RVector x_prime = cfg.sampler.eta_b > 0.0
                              ? pr_consistent(p, x_theta, state.x, cached_init, cfg)
                              : RVector();
  out.x = recombine(state.x, x_theta, x_prime, out.last_noise, schedule.alpha(t),
                    schedule.alpha(state.t), cfg.sampler);
  if (!out.x.allFinite()) throw DivergenceError("ddrm_pr_step: non-finite iterate");
  return out;
}

RealImage average_samples(const std::vector<RealImage>& samples, bool align, bool search_sign) {
  if (samples.empty()) throw ArgumentError("average_samples: no samples");
  RealImage acc = samples.front();
  for (std::size_t k = 1; k < samples.size(); ++k) {
    if (!samples[k].same_shape(acc)) throw ShapeError("average_samples: shapes differ");
    const RealImage s =
        align ? align_ambiguities(samples[k], samples.front(), search_sign).image : samples[k];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s[i];
  }
  const double n = static_cast<double>(samples.size());
  for (double& v : acc.values()) v /= n;
  return acc;
}

PrResult ddrm_pr_run(const PrProblem& p, const PrPipelineConfig& cfg,
                     const NoiseSchedule& schedule, const DenoiserHandle& den,
                     const std::vector<RealImage>* cached_init) {
  cfg.validate(schedule);
  p.validate();
  PrResult res;
  if (cached_init) {
    res.random_init = *cached_init;
  } else {
    std::vector<RandomInitResult> details;
    res.random_init = pr_random_init(p, cfg, &details);
    for (const auto& d : details) res.init_residuals.push_back(d.final_run.final_residual);
  }
  if (res.random_init.size() != p.channels()) {
    throw ShapeError("ddrm_pr_run: one cached init per channel");
  }
  const std::size_t h = p.image_h, w = p.image_w, C = p.channels();
  const RVector init_vp = to_vp(plane_vector(RealImage::from_channels(res.random_init)));
  const auto ts = cfg.sampler.timesteps();

  res.samples.resize(cfg.sampler.n_avg);
  parallel_for(cfg.sampler.n_avg, cfg.jobs, [&](std::size_t traj) {
    DdrmState st = simplified_init(init_vp, schedule, ts.front(), Rng(cfg.sampler.seed, traj));
    for (std::size_t k = 1; k < ts.size(); ++k) {
      st = ddrm_pr_step(st, ts[k], p, cfg, schedule, den, res.random_init);
    }
    res.samples[traj] = vector_image(from_vp(st.x), h, w, C, ValueRange::unit);
  });
  res.image = average_samples(res.samples, cfg.align_samples, !cfg.nonneg);
  return res;
}

PrResult ddrm_pr_reconstruct(const std::vector<MeasurementSet>& msets,
                             const PrPipelineConfig& cfg, const NoiseSchedule& schedule,
                             const DenoiserHandle& den) {
  return ddrm_pr_run(fourier_problem(msets, cfg.nonneg), cfg, schedule, den);
}

PrResult ddrm_pr_general_reconstruct(const std::vector<RVector>& y, const LinearOperator& op,
                                     std::size_t image_h, std::size_t image_w,
                                     const PrPipelineConfig& cfg, const NoiseSchedule& schedule,
                                     const DenoiserHandle& den,
                                     std::optional<ConstraintSet> constraints) {
  return ddrm_pr_run(general_problem(y, op, image_h, image_w, std::move(constraints)), cfg,
                     schedule, den);
}

json pr_manifest(const PrPipelineConfig& cfg, const NoiseSchedule& schedule,
                 const std::string& denoiser_id) {
  json j = sampler_manifest(schedule, cfg.sampler, SamplerMode::simplified, denoiser_id);
  j["mode"] = "ddrm-pr";
  j["pipeline"] = cfg.to_json();
  return j;
}

// ---------------------------------------------------------------------------
// Grid search

namespace {

const char* const kAxes[] = {"eta", "eta_b", "steps", "t_init", "n_avg", "beta", "inner_iters"};

bool known_axis(const std::string& name) {
  for (const char* a : kAxes)
    if (name == a) return true;
  return false;
}

std::size_t as_count(const std::string& axis, double v) {
  if (!(v >= 0.0) || v != std::floor(v)) {
    throw ArgumentError("grid axis " + axis + " needs non-negative integers");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

void GridSpec::validate() const {
  if (axes.empty()) throw ArgumentError("grid: no axes");
  for (const auto& [name, values] : axes) {
    if (!known_axis(name)) throw ArgumentError("grid: unknown axis '" + name + "'");
    if (values.empty()) throw ArgumentError("grid: axis '" + name + "' is empty");
  }
}

std::size_t GridSpec::cell_count() const {
  std::size_t n = 1;
  for (const auto& a : axes) n *= a.second.size();
  return n;
}

GridSpec GridSpec::parse(const std::string& text) {
  GridSpec g;
  try {
    const auto j = nlohmann::ordered_json::parse(text);
    const std::string obj = j.value("objective", "psnr");
    if (obj != "psnr" && obj != "ssim") throw FormatError("grid: unknown objective '" + obj + "'");
    g.objective = obj == "psnr" ? Objective::psnr : Objective::ssim;
    const auto& axes = j.at("axes");
    if (axes.is_object()) {
      for (const auto& [name, values] : axes.items()) {
        g.axes.emplace_back(name, values.get<std::vector<double>>());
      }
    } else {
      for (const auto& a : axes) {
        g.axes.emplace_back(a.at("name").get<std::string>(),
                            a.at("values").get<std::vector<double>>());
      }
    }
  } catch (const nlohmann::ordered_json::exception& e) {
    throw FormatError(std::string("grid spec: ") + e.what());
  }
  g.validate();
  return g;
}

PrPipelineConfig apply_grid_cell(const PrPipelineConfig& base, const GridSpec& grid,
                                 const std::vector<double>& values) {
  if (values.size() != grid.axes.size()) throw ArgumentError("grid cell arity mismatch");
  PrPipelineConfig c = base;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string& a = grid.axes[i].first;
    const double v = values[i];
    if (a == "eta") c.sampler.eta = v;
    else if (a == "eta_b") c.sampler.eta_b = v;
    else if (a == "steps") c.sampler.steps = as_count(a, v);
    else if (a == "t_init") c.sampler.t_init = as_count(a, v);
    else if (a == "n_avg") c.sampler.n_avg = as_count(a, v);
    else if (a == "beta") c.ap.beta = v;
    else if (a == "inner_iters") c.hio_inner_iters = as_count(a, v);
    else throw ArgumentError("grid: unknown axis '" + a + "'");
  }
  return c;
}

GridResult grid_search(const GridSpec& grid, const std::vector<ValidationItem>& val,
                       const PrPipelineConfig& base, const NoiseSchedule& schedule,
                       const DenoiserHandle& den, std::size_t jobs) {
  grid.validate();
  if (val.empty()) throw ArgumentError("grid_search: empty validation set");

  // RandomInit depends only on the measurement and the AP settings shared by
  // every cell, so it is computed once per item.
  std::vector<std::vector<RealImage>> inits;
  inits.reserve(val.size());
  for (const auto& item : val) inits.push_back(pr_random_init(item.problem, base));

  GridResult out;
  const std::size_t n = grid.cell_count();
  out.cells.resize(n);
  parallel_for(n, jobs, [&](std::size_t idx) {
    GridCell& cell = out.cells[idx];
    std::size_t rem = idx;
    cell.values.assign(grid.axes.size(), 0.0);
    for (std::size_t a = grid.axes.size(); a-- > 0;) {
      const auto& vals = grid.axes[a].second;
      cell.values[a] = vals[rem % vals.size()];
      rem /= vals.size();
    }
    const auto start = std::chrono::steady_clock::now();
    try {
      const PrPipelineConfig cfg = apply_grid_cell(base, grid, cell.values);
      double sp = 0.0, ss = 0.0;
      for (std::size_t i = 0; i < val.size(); ++i) {
        const PrResult r = ddrm_pr_run(val[i].problem, cfg, schedule, den, &inits[i]);
        const RealImage aligned = align_ambiguities(r.image, val[i].truth, !cfg.nonneg).image;
        sp += psnr(aligned, val[i].truth);
        const bool fits = aligned.height() >= 11 && aligned.width() >= 11;
        ss += fits ? ssim(aligned, val[i].truth) : std::numeric_limits<double>::quiet_NaN();
      }
      cell.mean_psnr = sp / static_cast<double>(val.size());
      cell.mean_ssim = ss / static_cast<double>(val.size());
      if (grid.objective == Objective::ssim && std::isnan(cell.mean_ssim)) {
        throw ArgumentError("images are smaller than the SSIM window");
      }
    } catch (const Error& e) {
      cell.failed = true;
      cell.error = e.what();
    }
    cell.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });

  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const GridCell& c = out.cells[i];
    if (c.failed) continue;
    const double score = grid.objective == Objective::psnr ? c.mean_psnr : c.mean_ssim;
    if (!out.any_success || score > best) {
      best = score;
      out.best = i;
      out.any_success = true;
    }
  }
  out.best_config = out.any_success ? apply_grid_cell(base, grid, out.cells[out.best].values) : base;
  return out;
}

std::string grid_csv(const GridSpec& grid, const GridResult& result) {
  std::ostringstream os;
  os.precision(10);
  for (const auto& a : grid.axes) os << a.first << ',';
  os << "mean_psnr,mean_ssim,seconds,status\n";
  for (const auto& c : result.cells) {
    for (double v : c.values) os << v << ',';
    if (c.failed) {
      os << ",,," << "failed\n";
    } else {
      os << c.mean_psnr << ',' << c.mean_ssim << ',' << c.seconds << ",ok\n";
    }
  }
  return os.str();
}

}  // namespace ddrmpr
