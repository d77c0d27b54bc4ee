#include "ddrmpr/classic_pr.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "ddrmpr/errors.hpp"
#include "ddrmpr/parallel.hpp"

namespace ddrmpr {

namespace {

constexpr double kZeroMagnitude = 1e-12;

CVector as_vector(const RealImage& x) {
  CVector v(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) v(static_cast<Eigen::Index>(i)) = x[i];
  return v;
}

void check_shapes(const RVector& y, const LinearOperator& op, const RealImage& x) {
  if (x.channels() != 1) throw ShapeError("alternating projection: expected a single channel");
  if (x.size() != op.in_dim()) throw ShapeError("alternating projection: image size != in_dim");
  if (static_cast<std::size_t>(y.size()) != op.out_dim()) {
    throw ShapeError("alternating projection: y length != out_dim");
  }
}

void check_grid(const RealImage& x, const ConstraintSet& cons) {
  if (x.height() != cons.support.height() || x.width() != cons.support.width()) {
    throw ShapeError("constraint support does not match the iterate grid");
  }
}

void check_finite(const RealImage& x, const char* who) {
  if (!x.all_finite()) throw DivergenceError(std::string(who) + ": non-finite iterate");
}

enum class Update { hio, er };

ApResult run_projection_loop(const RVector& y, const LinearOperator& op, const RealImage& init,
                             std::size_t iters, const ConstraintSet& cons, double beta,
                             Update update, const ApOptions& opts, const char* who) {
  check_shapes(y, op, init);
  check_grid(init, cons);
  cons.validate();
  if (iters < 1) throw ArgumentError(std::string(who) + ": iters must be >= 1");
  ApResult out;
  RealImage x = init;
  x.set_range(ValueRange::unit);
  RealImage u;
  if (opts.record_trace) out.residual_trace.reserve(iters);
  for (std::size_t k = 0; k < iters; ++k) {
    u = fourier_projection(x, y, op, opts.cg);
    // Each pixel is written from x_k and u_k only, so the update does not
    // depend on visitation order.
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (cons.violates(i, u[i])) {
        x[i] = update == Update::hio ? x[i] - beta * u[i] : 0.0;
      } else {
        x[i] = u[i];
      }
    }
    check_finite(x, who);
    if (opts.record_trace) {
      out.residual_trace.push_back(residual(y, cons.project(u), op, opts.residual));
    }
  }
  out.estimate = cons.project(u);
  out.final_residual = opts.record_trace ? out.residual_trace.back()
                                         : residual(y, out.estimate, op, opts.residual);
  out.iterate = std::move(x);
  return out;
}

}  // namespace

ConstraintSet ConstraintSet::fourier(std::size_t n_side, std::size_t factor, bool nonneg) {
  const std::size_t big = n_side * factor;
  return ConstraintSet{SupportMask::top_left(big, big, n_side, n_side), nonneg, true};
}

ConstraintSet ConstraintSet::full(std::size_t height, std::size_t width, bool nonneg) {
  return ConstraintSet{SupportMask::full(height, width), nonneg, true};
}

void ConstraintSet::validate() const {
  const bool support_active = support.count() < support.height() * support.width();
  if (!support_active && !nonneg && !real_valued) {
    throw ArgumentError("ConstraintSet: at least one constraint must be active");
  }
}

RealImage ConstraintSet::project(const RealImage& x) const {
  RealImage out = x;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (violates(i, out[i])) out[i] = 0.0;
  return out;
}

void HioParams::validate() const {
  if (!(beta > 0.0 && beta <= 1.0)) throw ArgumentError("HioParams: beta must be in (0, 1]");
  if (iters < 1) throw ArgumentError("HioParams: iters must be >= 1");
}

void RandomInitParams::validate() const {
  if (num_inits < 1 || short_iters < 1 || final_iters < 1) {
    throw ArgumentError("RandomInitParams: all counts must be >= 1");
  }
}

RealImage fourier_projection(const RealImage& x, const RVector& y, const LinearOperator& op,
                             const CgOptions& cg) {
  check_shapes(y, op, x);
  const CVector ax = op.apply(as_vector(x));
  CVector target(ax.size());
  for (Eigen::Index i = 0; i < ax.size(); ++i) {
    const double mag = std::abs(ax(i));
    const Complex phase = mag < kZeroMagnitude ? Complex(1.0) : ax(i) / mag;
    target(i) = y(i) * phase;
  }
  const CVector u = pinv_apply(op, target, cg);
  RealImage out(x.height(), x.width(), 1);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = u(static_cast<Eigen::Index>(i)).real();
  return out;
}

ApResult hio_run(const RVector& y, const LinearOperator& op, const RealImage& init,
                 const HioParams& params, const ConstraintSet& cons, const ApOptions& opts) {
  params.validate();
  return run_projection_loop(y, op, init, params.iters, cons, params.beta, Update::hio, opts,
                             "hio_run");
}

ApResult er_run(const RVector& y, const LinearOperator& op, const RealImage& init,
                std::size_t iters, const ConstraintSet& cons, const ApOptions& opts) {
  return run_projection_loop(y, op, init, iters, cons, 0.0, Update::er, opts, "er_run");
}

ApResult ap_general_run(const RVector& y, const LinearOperator& op, const RealImage& init,
                        std::size_t iters, const std::optional<ConstraintSet>& cons,
                        const ApOptions& opts) {
  if (cons) return er_run(y, op, init, iters, *cons, opts);
  check_shapes(y, op, init);
  if (iters < 1) throw ArgumentError("ap_general_run: iters must be >= 1");
  ApResult out;
  RealImage x = init;
  for (std::size_t k = 0; k < iters; ++k) {
    x = fourier_projection(x, y, op, opts.cg);
    check_finite(x, "ap_general_run");
    if (opts.record_trace) out.residual_trace.push_back(residual(y, x, op, opts.residual));
  }
  out.final_residual =
      opts.record_trace ? out.residual_trace.back() : residual(y, x, op, opts.residual);
  out.estimate = x;
  out.iterate = std::move(x);
  return out;
}

ApResult ap_run(const RVector& y, const LinearOperator& op, const RealImage& init,
                std::size_t iters, const ConstraintSet& cons, const ApOptions& opts) {
  switch (opts.method) {
    case ApMethod::hio:
      return hio_run(y, op, init, HioParams{opts.beta, iters}, cons, opts);
    case ApMethod::er:
      return er_run(y, op, init, iters, cons, opts);
    case ApMethod::general:
      return ap_general_run(y, op, init, iters, cons, opts);
  }
  throw ArgumentError("ap_run: unknown method");
}

RealImage random_start(const ConstraintSet& cons, Rng& rng) {
  RealImage x(cons.support.height(), cons.support.width(), 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = rng.uniform();
    x[i] = cons.support.inside(i) ? v : 0.0;
  }
  return x;
}

RandomInitResult random_init(const RVector& y, const LinearOperator& op,
                             const RandomInitParams& params, const ConstraintSet& cons,
                             const ApOptions& opts) {
  params.validate();
  cons.validate();
  ApOptions short_opts = opts;
  short_opts.record_trace = false;

  std::vector<ApResult> candidates(params.num_inits);
  parallel_for(params.num_inits, params.jobs, [&](std::size_t idx) {
    Rng rng(params.seed, idx);
    candidates[idx] = ap_run(y, op, random_start(cons, rng), params.short_iters, cons, short_opts);
  });

  RandomInitResult out;
  out.candidate_residuals.reserve(candidates.size());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t idx = 0; idx < candidates.size(); ++idx) {
    const double r = candidates[idx].final_residual;
    out.candidate_residuals.push_back(r);
    if (r < best) {
      best = r;
      out.selected = idx;
    }
  }
  out.final_run =
      ap_run(y, op, candidates[out.selected].iterate, params.final_iters, cons, opts);
  out.estimate = out.final_run.estimate;
  return out;
}

double residual(const RVector& y, const RealImage& x, const LinearOperator& op,
                ResidualKind kind) {
  check_shapes(y, op, x);
  const CVector ax = op.apply(as_vector(x));
  double s = 0.0;
  for (Eigen::Index i = 0; i < ax.size(); ++i) {
    const double d = kind == ResidualKind::magnitude ? y(i) - std::abs(ax(i))
                                                     : y(i) * y(i) - std::norm(ax(i));
    s += d * d;
  }
  return std::sqrt(s);
}

std::string residual_trace_csv(const std::vector<double>& trace) {
  std::ostringstream os;
  os << std::setprecision(17) << "iter,residual\n";
  for (std::size_t k = 0; k < trace.size(); ++k) os << k + 1 << ',' << trace[k] << '\n';
  return os.str();
}

}  // namespace ddrmpr
