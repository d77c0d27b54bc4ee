#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "ddrmpr/ddrm_pr.hpp"
#include "ddrmpr/errors.hpp"
#include "ddrmpr/synthetic.hpp"
#include "oracles.hpp"

using namespace ddrmpr;

namespace {

PrPipelineConfig quick_config() {
  PrPipelineConfig c;
  c.sampler.steps = 5;
  c.sampler.t_init = 500;
  c.sampler.seed = 3;
  c.hio_inner_iters = 20;
  c.random_init.num_inits = 4;
  c.random_init.short_iters = 20;
  c.random_init.final_iters = 100;
  c.random_init.seed = 9;
  return c;
}

struct Fixture {
  RealImage truth;  // unit range, image-sized
  std::vector<MeasurementSet> msets;
  PrProblem problem;
};

Fixture fourier_fixture(std::size_t n, std::uint64_t seed, std::size_t channels = 1) {
  Rng rng(seed);
  std::vector<RealImage> planes;
  for (std::size_t c = 0; c < channels; ++c) planes.push_back(piecewise_constant_image(n, n, 1, rng));
  RealImage x = RealImage::from_channels(planes);
  x.set_range(ValueRange::unit);
  auto ms = simulate_fourier(x, 2, 0.0, seed);
  PrProblem p = fourier_problem(ms);
  return {x, std::move(ms), std::move(p)};
}

RVector vec(const RealImage& img) {
  return Eigen::Map<const RVector>(img.values().data(), static_cast<Eigen::Index>(img.size()));
}

RealImage img(const RVector& v, std::size_t h, std::size_t w, std::size_t c, ValueRange r) {
  return RealImage(h, w, c, std::vector<double>(v.data(), v.data() + v.size()), r);
}

double max_diff(const RVector& a, const RVector& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Scales channel k of a 3-channel input by weights[k].
class ChannelScale final : public Denoiser {
 public:
  RealImage denoise(const DenoiseRequest& req) const override {
    RealImage out = req.x_t;
    const double w[3] = {1.0, 0.5, 0.0};
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= w[i % 3];
    return out;
  }
};

}  // namespace

TEST_CASE("range maps between unit and symmetric coordinates") {
  const RVector u = (RVector(5) << 0.0, 0.25, 0.5, 1.0, 0.9).finished();
  CHECK(max_diff(to_vp(u), (RVector(5) << -1.0, -0.5, 0.0, 1.0, 0.8).finished()) < 1e-15);
  CHECK(max_diff(from_vp(to_vp(u)), u) < 1e-15);
  const RVector out = from_vp((RVector(3) << -3.0, 2.0, 0.0).finished());
  CHECK(out(0) == 0.0);
  CHECK(out(1) == 1.0);
  CHECK(out(2) == 0.5);
}

TEST_CASE("pipeline config JSON and validation") {
  PrPipelineConfig c = quick_config();
  c.inner_init = InnerInit::previous_iterate;
  c.ap.beta = 0.7;
  c.nonneg = false;
  const PrPipelineConfig d = PrPipelineConfig::from_json(c.to_json());
  CHECK(d.to_json() == c.to_json());
  CHECK(d.inner_init == InnerInit::previous_iterate);

  const NoiseSchedule sch = schedule_linear_vp();
  CHECK_NOTHROW(c.validate(sch));
  PrPipelineConfig bad = c;
  bad.hio_inner_iters = 0;
  CHECK_THROWS_AS(bad.validate(sch), ArgumentError);
  bad = c;
  bad.ap.beta = 0.0;
  CHECK_THROWS_AS(bad.validate(sch), ArgumentError);
  bad = c;
  bad.sampler.t_init = 2000;
  CHECK_THROWS_AS(bad.validate(sch), ArgumentError);
  auto j = c.to_json();
  j["inner_init"] = "bogus";
  CHECK_THROWS_AS(PrPipelineConfig::from_json(j), FormatError);
}

TEST_CASE("published hyperparameter fixtures validate and are echoed in the manifest") {
  const NoiseSchedule sch = schedule_linear_vp();
  PrPipelineConfig a;
  a.sampler.eta = 0.15;
  a.sampler.eta_b = 0.20;
  a.sampler.steps = 15;
  a.sampler.t_init = 350;
  a.sampler.n_avg = 1;
  CHECK_NOTHROW(a.validate(sch));
  const auto ma = pr_manifest(a, sch, "shrinkage");
  CHECK(ma.at("pipeline").at("sampler").at("eta") == 0.15);
  CHECK(ma.at("pipeline").at("sampler").at("eta_b") == 0.20);
  CHECK(ma.at("pipeline").at("sampler").at("steps") == 15);
  CHECK(ma.at("pipeline").at("sampler").at("t_init") == 350);
  CHECK(ma.at("steps").size() == 16);
  CHECK(ma.at("mode") == "ddrm-pr");

  PrPipelineConfig b;
  b.sampler.n_avg = 1;
  b.sampler.eta = 1.0;
  b.sampler.eta_b = 0.0;
  b.sampler.steps = 35;
  b.sampler.t_init = 220;
  CHECK_NOTHROW(b.validate(sch));
  const auto mb = pr_manifest(b, sch, "shrinkage");
  CHECK(mb.at("cfg").at("t_init") == 220);
  CHECK(mb.at("cfg").at("eta_b") == 0.0);
}

TEST_CASE("eta_b = 0 never touches the alternating-projection machinery") {
  const Fixture f = fourier_fixture(8, 1);
  const NoiseSchedule sch = schedule_linear_vp();
  PrPipelineConfig cfg = quick_config();
  cfg.sampler.eta = 0.6;
  cfg.sampler.eta_b = 0.0;
  const DenoiserHandle den = make_shrinkage_denoiser();
  Rng r0(5);
  RVector x(64);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = 0.5 * r0.normal();
  const DdrmState st{x, 400, Rng(77), RVector()};

  // An empty cache would throw if the consistent term were assembled.
  const DdrmState out = ddrm_pr_step(st, 300, f.problem, cfg, sch, den, {});
  const DdrmState cached = ddrm_pr_step(st, 300, f.problem, cfg, sch, den, pr_random_init(f.problem, cfg));
  CHECK(out.x == cached.x);

  const RVector x_theta = denoise_vector(den, x, {8, 8, 1}, sch, 400);
  Rng rng(77);
  RVector eps(64);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
  const double at = sch.alpha(300), an = sch.alpha(400);
  const RVector eps_theta = (x - std::sqrt(an) * x_theta) / std::sqrt(1 - an);
  const RVector want = std::sqrt(at) * x_theta + std::sqrt(1 - at) * (0.6 * eps + 0.4 * eps_theta);
  CHECK(max_diff(out.x, want) < 1e-13);
}

TEST_CASE("a consistent, feasible denoiser output makes the nonlinear term the cached init") {
  const Fixture f = fourier_fixture(8, 2);
  const PrPipelineConfig cfg = quick_config();
  const std::vector<RealImage> cache = pr_random_init(f.problem, cfg);
  const RVector x_theta = to_vp(vec(f.truth));
  const RVector xp = pr_consistent(f.problem, x_theta, RVector::Zero(64), cache, cfg);
  CHECK(max_diff(xp, to_vp(vec(cache.front()))) < 1e-9);
}

TEST_CASE("one step equals a hand-assembled composition of its parts") {
  const Fixture f = fourier_fixture(8, 4);
  const NoiseSchedule sch = schedule_linear_vp();
  PrPipelineConfig cfg = quick_config();
  cfg.sampler.eta = 0.4;
  cfg.sampler.eta_b = 0.7;
  const DenoiserHandle den = make_gaussian_denoiser();
  const std::vector<RealImage> cache = pr_random_init(f.problem, cfg);
  Rng r0(6);
  RVector x(64);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = 0.4 * r0.normal();
  const DdrmState st{x, 600, Rng(8), RVector()};
  const DdrmState out = ddrm_pr_step(st, 450, f.problem, cfg, sch, den, cache);

  const RVector x_theta = denoise_vector(den, x, {8, 8, 1}, sch, 600);
  const RealImage u = img(from_vp(x_theta), 8, 8, 1, ValueRange::unit);
  const RealImage grid_u = pad_to_oversampled(u, 2);
  const LinearOperator op = make_fourier_operator(16, 1);
  const RVector z = op.apply(vec(grid_u).cast<Complex>()).cwiseAbs();
  ApOptions opts = cfg.ap;
  opts.record_trace = false;
  const ApResult hio = hio_run(z, op, grid_u, HioParams{cfg.ap.beta, cfg.hio_inner_iters},
                               ConstraintSet::fourier(8, 2), opts);
  const RVector x_prime =
      x_theta - to_vp(vec(crop_top_left(hio.estimate, 8, 8))) + to_vp(vec(cache.front()));
  Rng rng(8);
  RVector eps(64);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
  const RVector want = recombine(x, x_theta, x_prime, eps, sch.alpha(450), sch.alpha(600), cfg.sampler);
  CHECK(out.x == want);
  CHECK(out.last_noise == eps);
  CHECK(out.t == 450);
  CHECK_THROWS_AS(ddrm_pr_step(st, 700, f.problem, cfg, sch, den, cache), ArgumentError);
}

TEST_CASE("literal inner initialization is selectable") {
  const Fixture f = fourier_fixture(8, 5);
  PrPipelineConfig cfg = quick_config();
  const std::vector<RealImage> cache = pr_random_init(f.problem, cfg);
  Rng r0(1);
  RVector xt(64), xn(64);
  for (Eigen::Index i = 0; i < 64; ++i) {
    xt(i) = 0.5 * r0.normal();
    xn(i) = 0.5 * r0.normal();
  }
  const RVector a = pr_consistent(f.problem, xt, xn, cache, cfg);
  cfg.inner_init = InnerInit::previous_iterate;
  const RVector b = pr_consistent(f.problem, xt, xn, cache, cfg);
  CHECK(a.allFinite());
  CHECK(b.allFinite());
  CHECK(max_diff(a, b) > 0.0);
}

TEST_CASE("inner stage is equivariant under channel permutation") {
  const Fixture f = fourier_fixture(8, 6, 3);
  const PrPipelineConfig cfg = quick_config();
  const std::vector<RealImage> cache = pr_random_init(f.problem, cfg);
  const RVector x_theta = to_vp(vec(f.truth)) * 0.5;
  const RVector a = pr_consistent(f.problem, x_theta, x_theta, cache, cfg);

  const int perm[3] = {2, 0, 1};
  std::vector<RVector> py;
  std::vector<RealImage> pcache;
  RVector px(x_theta.size());
  for (int c = 0; c < 3; ++c) {
    py.push_back(f.problem.y[static_cast<std::size_t>(perm[c])]);
    pcache.push_back(cache[static_cast<std::size_t>(perm[c])]);
    for (Eigen::Index i = 0; i < 64; ++i) px(3 * i + c) = x_theta(3 * i + perm[c]);
  }
  PrProblem pp = f.problem;
  pp.y = py;
  const RVector b = pr_consistent(pp, px, px, pcache, cfg);
  double err = 0.0;
  for (int c = 0; c < 3; ++c)
    for (Eigen::Index i = 0; i < 64; ++i) err = std::max(err, std::abs(b(3 * i + c) - a(3 * i + perm[c])));
  CHECK(err < 1e-12);
}

TEST_CASE("grayscale problems use an RGB denoiser by replication and averaging") {
  const DenoiserHandle den = make_custom_denoiser("rgb", {0, 0, 3}, std::make_shared<ChannelScale>());
  const NoiseSchedule sch = schedule_linear_vp();
  RVector x(4);
  x << 0.3, -0.6, 0.9, 0.0;
  const RVector out = pr_denoise(den, x, {2, 2, 1}, sch, 10);
  CHECK(max_diff(out, x * 0.5) < 1e-15);
}

TEST_CASE("run structure: cached init, determinism and averaging") {
  const Fixture f = fourier_fixture(8, 7);
  const NoiseSchedule sch = schedule_linear_vp();
  PrPipelineConfig cfg = quick_config();
  cfg.sampler.eta = 0.8;
  cfg.sampler.eta_b = 0.5;
  const DenoiserHandle den = make_shrinkage_denoiser();

  const PrResult a = ddrm_pr_reconstruct(f.msets, cfg, sch, den);
  REQUIRE(a.samples.size() == 1);
  CHECK(a.image.vector() == a.samples.front().vector());
  CHECK(a.image.range() == ValueRange::unit);
  CHECK(a.init_residuals.size() == 1);
  const auto init = pr_random_init(f.problem, cfg);
  CHECK(a.random_init.front().vector() == init.front().vector());

  const PrResult b = ddrm_pr_reconstruct(f.msets, cfg, sch, den);
  CHECK(a.image.vector() == b.image.vector());
  const PrResult c = ddrm_pr_run(f.problem, cfg, sch, den, &init);
  CHECK(a.image.vector() == c.image.vector());

  cfg.sampler.n_avg = 3;
  cfg.jobs = 3;
  const PrResult d = ddrm_pr_reconstruct(f.msets, cfg, sch, den);
  REQUIRE(d.samples.size() == 3);
  CHECK(d.samples[0].vector() == a.samples[0].vector());
  CHECK(d.samples[1].vector() != d.samples[0].vector());
  CHECK(d.image.vector() == average_samples(d.samples).vector());
  cfg.jobs = 1;
  CHECK(ddrm_pr_reconstruct(f.msets, cfg, sch, den).image.vector() == d.image.vector());
}

TEST_CASE("with the oracle denoiser and full blending the output is the cached init") {
  const Fixture f = fourier_fixture(8, 8);
  const NoiseSchedule sch = schedule_linear_vp();
  PrPipelineConfig cfg = quick_config();
  cfg.sampler.eta = 1.0;
  cfg.sampler.eta_b = 1.0;
  const PrResult r = ddrm_pr_reconstruct(f.msets, cfg, sch, make_oracle_denoiser(to_symmetric(f.truth)));
  CHECK(max_diff(vec(r.image), vec(r.random_init.front())) < 1e-9);
}

TEST_CASE("general path on the Fourier operator reproduces the Fourier path") {
  const Fixture f = fourier_fixture(8, 9);
  const NoiseSchedule sch = schedule_linear_vp();
  PrPipelineConfig cfg = quick_config();
  cfg.sampler.eta_b = 0.6;
  const DenoiserHandle den = make_shrinkage_denoiser();
  const PrResult a = ddrm_pr_reconstruct(f.msets, cfg, sch, den);
  const PrResult b = ddrm_pr_general_reconstruct({f.msets.front().y}, make_fourier_operator(16, 1), 8, 8,
                                                 cfg, sch, den, ConstraintSet::fourier(8, 2));
  CHECK(a.image.vector() == b.image.vector());
}

TEST_CASE("general operator without constraints runs the general projection") {
  const std::size_t side = 4;
  const LinearOperator op = make_random_transmission_operator(64, side * side, 5);
  Rng rng(2);
  const RealImage x = piecewise_constant_image(side, side, 1, rng);
  const RVector y = simulate(x, op, 0.0, 0).y;
  const NoiseSchedule sch = schedule_linear_vp();
  PrPipelineConfig cfg = quick_config();
  cfg.sampler.n_avg = 1;
  cfg.sampler.eta = 1.0;
  cfg.sampler.eta_b = 0.0;
  cfg.sampler.steps = 35;
  cfg.sampler.t_init = 220;
  const PrResult r = ddrm_pr_general_reconstruct({y}, op, side, side, cfg, sch, make_shrinkage_denoiser());
  CHECK(r.image.height() == side);
  CHECK(r.image.all_finite());
  const PrProblem p = general_problem({y}, op, side, side);
  CHECK_FALSE(p.constraints.has_value());
  CHECK_THROWS_AS(general_problem({RVector::Ones(63)}, op, side, side), ShapeError);
  CHECK_THROWS_AS(general_problem({-RVector::Ones(64)}, op, side, side), DomainError);
}

TEST_CASE("average_samples") {
  RealImage a(4, 4, 1, ValueRange::unit), b(4, 4, 1, ValueRange::unit);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = 0.2;
    b[i] = 0.4;
  }
  CHECK(average_samples({a}).vector() == a.vector());
  const RealImage ab = average_samples({a, b}, false);
  for (double v : ab.values()) CHECK(v == doctest::Approx(0.3));
  CHECK_THROWS_AS(average_samples({}), ArgumentError);
  CHECK_THROWS_AS(average_samples({a, RealImage(2, 2, 1)}), ShapeError);

  // A circularly shifted copy is aligned before averaging.
  const RealImage r = oracle::random_image(8, 8, 1, 3);
  RealImage s(8, 8, 1, ValueRange::unit);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) s.at((y + 3) % 8, (x + 5) % 8) = r.at(y, x);
  const RealImage m = average_samples({r, s});
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == doctest::Approx(r[i]).epsilon(1e-12));
}

TEST_CASE("averaging noisy copies reduces error") {
  Rng rng(12);
  const RealImage truth = piecewise_constant_image(16, 16, 1, rng);
  int wins = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    std::vector<RealImage> copies;
    for (int k = 0; k < 8; ++k) {
      RealImage c = truth;
      for (std::size_t i = 0; i < c.size(); ++i) c[i] += 0.1 * rng.normal();
      copies.push_back(c);
    }
    wins += mse(average_samples(copies), truth) < mse(copies.front(), truth);
  }
  CHECK(wins >= 38);
}

TEST_CASE("grid spec parsing") {
  const GridSpec a = GridSpec::parse(R"({"axes": {"eta": [0.5, 1.0], "steps": [5, 10, 20]}})");
  REQUIRE(a.axes.size() == 2);
  CHECK(a.axes[0].first == "eta");
  CHECK(a.axes[1].second == std::vector<double>{5, 10, 20});
  CHECK(a.cell_count() == 6);
  CHECK(a.objective == Objective::psnr);
  const GridSpec b = GridSpec::parse(
      R"({"objective": "ssim", "axes": [{"name": "t_init", "values": [200]}, {"name": "eta_b", "values": [0, 1]}]})");
  CHECK(b.objective == Objective::ssim);
  CHECK(b.axes[0].first == "t_init");
  CHECK_THROWS_AS(GridSpec::parse(R"({"axes": {"gamma": [1]}})"), ArgumentError);
  CHECK_THROWS_AS(GridSpec::parse(R"({"axes": {"eta": []}})"), ArgumentError);
  CHECK_THROWS_AS(GridSpec::parse(R"({"axes": {}})"), ArgumentError);
  CHECK_THROWS_AS(GridSpec::parse(R"({"objective": "lpips", "axes": {"eta": [1]}})"), FormatError);
  CHECK_THROWS_AS(GridSpec::parse("not json"), FormatError);

  const PrPipelineConfig base;
  const PrPipelineConfig c = apply_grid_cell(base, GridSpec::parse(
      R"({"axes": {"eta": [0.3], "eta_b": [0.2], "steps": [7], "t_init": [300], "n_avg": [2], "beta": [0.8], "inner_iters": [30]}})"),
      {0.3, 0.2, 7, 300, 2, 0.8, 30});
  CHECK(c.sampler.eta == 0.3);
  CHECK(c.sampler.eta_b == 0.2);
  CHECK(c.sampler.steps == 7);
  CHECK(c.sampler.t_init == 300);
  CHECK(c.sampler.n_avg == 2);
  CHECK(c.ap.beta == 0.8);
  CHECK(c.hio_inner_iters == 30);
  CHECK_THROWS_AS(apply_grid_cell(base, a, {0.5, 2.5}), ArgumentError);
  CHECK_THROWS_AS(apply_grid_cell(base, a, {0.5}), ArgumentError);
}

TEST_CASE("grid search enumerates cells, skips failures and prefers the working config") {
  const NoiseSchedule sch = schedule_linear_vp();
  std::vector<ValidationItem> val;
  for (std::uint64_t s = 0; s < 2; ++s) {
    Fixture f = fourier_fixture(8, 20 + s);
    val.push_back({"item" + std::to_string(s), f.truth, f.problem});
  }
  PrPipelineConfig base = quick_config();
  base.sampler.t_init = 1000;
  const DenoiserHandle den = make_shrinkage_denoiser();

  SUBCASE("single cell") {
    const GridSpec g = GridSpec::parse(R"({"axes": {"eta_b": [0.5]}})");
    const GridResult r = grid_search(g, val, base, sch, den);
    REQUIRE(r.cells.size() == 1);
    CHECK(r.any_success);
    CHECK(r.best == 0);
    CHECK(r.best_config.sampler.eta_b == 0.5);
  }
  SUBCASE("degenerate versus working") {
    const GridSpec g = GridSpec::parse(R"({"axes": {"steps": [1, 10], "eta_b": [0, 1]}})");
    const GridResult r = grid_search(g, val, base, sch, den, 2);
    REQUIRE(r.cells.size() == 4);
    CHECK(r.cells[0].values == std::vector<double>{1, 0});
    CHECK(r.cells[1].values == std::vector<double>{1, 1});
    CHECK(r.cells[2].values == std::vector<double>{10, 0});
    CHECK(r.best != 0);
    CHECK(r.cells[r.best].mean_psnr > r.cells[0].mean_psnr);
    const std::string csv = grid_csv(g, r);
    CHECK(csv.rfind("steps,eta_b,mean_psnr,mean_ssim,seconds,status\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  }
  SUBCASE("ties go to the earliest cell and failures are excluded") {
    const GridSpec g = GridSpec::parse(R"({"axes": {"eta": [0.0, 0.5, 0.5]}})");
    const GridResult r = grid_search(g, val, base, sch, den);
    CHECK(r.cells[0].failed);
    CHECK_FALSE(r.cells[0].error.empty());
    CHECK(r.best == 1);
    CHECK(r.cells[1].mean_psnr == r.cells[2].mean_psnr);
    CHECK(grid_csv(g, r).find("failed") != std::string::npos);
  }
  SUBCASE("all cells failing") {
    const GridSpec g = GridSpec::parse(R"({"axes": {"eta": [0.0]}})");
    const GridResult r = grid_search(g, val, base, sch, den);
    CHECK_FALSE(r.any_success);
  }
  CHECK_THROWS_AS(grid_search(GridSpec::parse(R"({"axes": {"eta": [1]}})"), {}, base, sch, den),
                  ArgumentError);
}

TEST_CASE("general operator: DDRM-PR is never worse than its projection init") {
  const NoiseSchedule sch = schedule_linear_vp();
  const DenoiserHandle den = make_gaussian_denoiser();
  double mean_init = 0.0, mean_out = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const LinearOperator op = make_random_transmission_operator(64, 16, 100 + s);
    Rng rng(200 + s);
    const RealImage x = piecewise_constant_image(4, 4, 1, rng);
    const RVector y = simulate(x, op, 0.0, 0).y;
    PrPipelineConfig cfg;
    cfg.sampler.eta = 1.0;
    cfg.sampler.eta_b = 1.0;
    cfg.sampler.steps = 20;
    cfg.sampler.seed = s;
    cfg.random_init.seed = s;
    const PrResult r = ddrm_pr_general_reconstruct({y}, op, 4, 4, cfg, sch, den);
    mean_init += psnr(align_ambiguities(r.random_init.front(), x).image, x) / 20.0;
    mean_out += psnr(align_ambiguities(r.image, x).image, x) / 20.0;
  }
  CHECK(mean_out >= mean_init);
}
