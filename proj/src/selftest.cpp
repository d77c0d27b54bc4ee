#include "ddrmpr/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ddrmpr/classic_pr.hpp"
#include "ddrmpr/ddrm_core.hpp"
#include "ddrmpr/errors.hpp"
#include "ddrmpr/eval.hpp"
#include "ddrmpr/forward_model.hpp"
#include "ddrmpr/synthetic.hpp"

namespace ddrmpr {

namespace {

struct OperatorSpec {
  std::size_t m, n, rank;  // rank 0: full rank
  bool complex;
};

// Rectangular, square and rank-deficient shapes with m, n <= 16.
const OperatorSpec kSpecs[] = {
    {6, 4, 0, false},  {8, 16, 0, false}, {16, 8, 0, false}, {12, 6, 0, false},
    {5, 12, 0, false}, {16, 16, 5, false}, {12, 9, 4, false}, {10, 10, 0, false},
    {8, 6, 0, true},   {9, 14, 3, true},
};

LinearOperator make_test_operator(const OperatorSpec& spec, std::size_t idx, Rng& rng) {
  const auto m = static_cast<Eigen::Index>(spec.m), n = static_cast<Eigen::Index>(spec.n);
  auto draw = [&](Eigen::Index r, Eigen::Index c) {
    CMatrix a(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i)
        a(i, j) = spec.complex ? Complex(rng.normal(), rng.normal()) : Complex(rng.normal());
    return a;
  };
  CMatrix a = spec.rank ? CMatrix(draw(m, static_cast<Eigen::Index>(spec.rank)) *
                                  draw(static_cast<Eigen::Index>(spec.rank), n))
                        : draw(m, n);
  a /= std::sqrt(static_cast<double>(spec.m));
  const std::string id = "selftest:" + std::to_string(idx) + ":" + std::to_string(spec.m) + "x" +
                         std::to_string(spec.n);
  if (spec.complex) return LinearOperator::dense(id, std::move(a));
  return LinearOperator::dense(id, RMatrix(a.real()));
}

double rel_err(const RVector& ref, const RVector& x) {
  const double d = ref.norm();
  return (ref - x).norm() / std::max(d, 1e-300);
}

}  // namespace

EquivalenceReport run_equivalence_suite(const EquivalenceOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  if (opts.operators < 1 || opts.operators > std::size(kSpecs)) {
    throw ArgumentError("equivalence suite: operators must be in [1, " +
                        std::to_string(std::size(kSpecs)) + "]");
  }
  const NoiseSchedule schedule = schedule_linear_vp(opts.T);
  CgOptions cg;
  cg.tol = 1e-13;
  cg.max_iters = 500;

  EquivalenceReport report;
  for (double eta : opts.etas) {
    report.max_coefficient_gap =
        std::max(report.max_coefficient_gap,
                 std::abs(mixing_coefficient(NoiseMixing::linear, eta) -
                          mixing_coefficient(NoiseMixing::exact, eta)));
  }

  Rng op_rng(opts.seed, 0);
  for (std::size_t k = 0; k < opts.operators; ++k) {
    const OperatorSpec& spec = kSpecs[k];
    const LinearOperator op = make_test_operator(spec, k, op_rng);
    const LinearOperator op_svd = op.with_svd();
    const std::size_t n = spec.n;
    const ImageShape shape{1, n, 1};
    const DenoiserHandle den = make_shrinkage_denoiser({1, n, 1}, 1.0, 2);

    Rng x_rng(opts.seed, 1000 + k);
    RVector x0(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < x0.size(); ++i) x0(i) = 2.0 * x_rng.uniform() - 1.0;
    const CVector y = op.apply(x0.cast<Complex>());
    const LinearMeasurement meas = LinearMeasurement::make(op, y, cg);

    for (double eta : opts.etas) {
      for (double eta_b : opts.eta_bs) {
        SamplerConfig exact_cfg;
        exact_cfg.eta = eta;
        exact_cfg.eta_b = eta_b;
        exact_cfg.steps = opts.steps;
        exact_cfg.t_init = opts.t_init;
        exact_cfg.mixing = NoiseMixing::exact;
        exact_cfg.validate(schedule);
        SamplerConfig approx_cfg = exact_cfg;
        approx_cfg.mixing = NoiseMixing::linear;
        const auto ts = exact_cfg.timesteps();

        const Rng init_rng(opts.seed, 2000 + k);
        DdrmState spec_st = spectral_init(y, op_svd, schedule, ts.front(), 0.0, init_rng);
        DdrmState simp_st = simplified_init(meas.pinv_y, schedule, ts.front(), init_rng);
        DdrmState approx_st = simp_st;

        EquivalenceCase c{op.id(), spec.m, spec.n, op_svd.svd()->rank(), eta, eta_b, 0.0, 0.0};
        c.max_rel_err = rel_err(spec_st.x, simp_st.x);
        Rng noise_rng(opts.seed, 3000 + k);
        for (std::size_t s = 1; s < ts.size(); ++s) {
          const std::size_t t_next = spec_st.t, t = ts[s];
          const RVector x_theta = denoise_vector(den, spec_st.x, shape, schedule, t_next);
          const RVector eps_theta = epsilon_estimate(spec_st.x, x_theta, schedule.alpha(t_next));
          RVector eps(static_cast<Eigen::Index>(n));
          for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = noise_rng.normal();
          const SpectralNoise noise{
              eps, eta * eps + mixing_coefficient(NoiseMixing::exact, eta) * eps_theta};

          spec_st = spectral_update(spec_st, x_theta, t, y, op_svd, schedule, exact_cfg, 0.0,
                                    &noise);
          simp_st = simplified_step(simp_st, t, meas, schedule, exact_cfg, den, shape, &eps);
          approx_st = simplified_step(approx_st, t, meas, schedule, approx_cfg, den, shape, &eps);
          c.max_rel_err = std::max(c.max_rel_err, rel_err(spec_st.x, simp_st.x));
          c.approx_rel_err = std::max(c.approx_rel_err, rel_err(spec_st.x, approx_st.x));
        }
        report.max_rel_err = std::max(report.max_rel_err, c.max_rel_err);
        report.max_approx_rel_err = std::max(report.max_approx_rel_err, c.approx_rel_err);
        report.cases.push_back(std::move(c));
      }
    }
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.passed = report.max_rel_err <= opts.tolerance;
  return report;
}

MarginalStats run_marginal_check(std::size_t draws, std::uint64_t seed) {
  if (draws < 2) throw ArgumentError("marginal check: draws must be >= 2");
  const NoiseSchedule schedule = schedule_linear_vp(1000);
  SamplerConfig cfg;
  cfg.eta = 0.5;
  cfg.eta_b = 0.5;
  cfg.steps = 6;
  cfg.t_init = 600;
  cfg.mixing = NoiseMixing::exact;
  cfg.validate(schedule);
  const auto ts = cfg.timesteps();

  Rng rng(seed, 0);
  const std::size_t n = 4;
  RMatrix h(3, 4);
  for (Eigen::Index j = 0; j < h.cols(); ++j)
    for (Eigen::Index i = 0; i < h.rows(); ++i) h(i, j) = rng.normal();
  const LinearOperator op = LinearOperator::dense("marginal:3x4", h, true);
  const RVector x0 = RVector::LinSpaced(static_cast<Eigen::Index>(n), -0.75, 0.75);
  const LinearMeasurement meas = LinearMeasurement::make(op, op.apply(x0.cast<Complex>()));

  // Visited timesteps except t = 0, where the residual is 0/0.
  const std::size_t levels = ts.size() - 1;
  const auto k = static_cast<Eigen::Index>(n);
  std::vector<RVector> sum(levels, RVector::Zero(k)), sum_sq(levels, RVector::Zero(k));
  MarginalStats stats;
  stats.draws = draws;

  for (std::size_t d = 0; d < draws; ++d) {
    DdrmState st = simplified_init(x0, schedule, ts.front(), Rng(seed, d + 1));
    for (std::size_t s = 0; s < levels; ++s) {
      if (s > 0) st = simplified_update(st, x0, ts[s], meas, schedule, cfg);
      const double a = schedule.alpha(st.t);
      const RVector z = (st.x - std::sqrt(a) * x0) / std::sqrt(1.0 - a);
      sum[s] += z;
      sum_sq[s] += z.cwiseProduct(z);
      const RVector rec = epsilon_estimate(st.x, x0, a);
      if (s == 0) {
        stats.max_eps_recovery_err = std::max(stats.max_eps_recovery_err,
                                              (rec - st.last_noise).cwiseAbs().maxCoeff());
      }
    }
  }
  const double nd = static_cast<double>(draws);
  for (std::size_t s = 0; s < levels; ++s) {
    const RVector mean = sum[s] / nd;
    const RVector var = (sum_sq[s] - nd * mean.cwiseProduct(mean)) / (nd - 1.0);
    stats.max_abs_mean = std::max(stats.max_abs_mean, mean.cwiseAbs().maxCoeff());
    stats.max_abs_var_dev =
        std::max(stats.max_abs_var_dev, (var.array() - 1.0).abs().maxCoeff());
  }
  stats.passed = stats.max_abs_mean < 0.02 && stats.max_abs_var_dev < 0.05 &&
                 stats.max_eps_recovery_err <= 1e-12;
  return stats;
}

HioFixedPointStats run_hio_fixed_point_check(std::size_t trials, std::uint64_t seed,
                                             std::size_t side) {
  HioFixedPointStats stats;
  stats.trials = trials;
  stats.min_psnr = kPsnrCap;
  const LinearOperator op = make_fourier_operator(2 * side, 1);
  const ConstraintSet cons = ConstraintSet::fourier(side, 2);
  for (std::size_t k = 0; k < trials; ++k) {
    Rng rng(seed, k);
    const RealImage truth = piecewise_constant_image(side, side, 1, rng);
    const MeasurementSet mset = simulate(pad_to_oversampled(truth, 2), op, 0.0, seed);
    const RealImage start = pad_to_oversampled(truth, 2);
    ApOptions opts;
    opts.record_trace = false;
    const ApResult runs[] = {hio_run(mset.y, op, start, HioParams{0.9, 50}, cons, opts),
                             er_run(mset.y, op, start, 50, cons, opts)};
    for (const ApResult& r : runs) {
      stats.max_rel_residual =
          std::max(stats.max_rel_residual, r.final_residual / mset.y.norm());
      stats.min_psnr =
          std::min(stats.min_psnr, psnr(crop_top_left(r.estimate, side, side), truth));
    }
  }
  stats.passed = stats.max_rel_residual <= 1e-9 && stats.min_psnr >= 90.0;
  return stats;
}

}  // namespace ddrmpr
