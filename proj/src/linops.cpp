#include "ddrmpr/linops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ddrmpr/errors.hpp"
#include "ddrmpr/field_ops.hpp"

namespace ddrmpr {

namespace {

// Singular values below this fraction of the largest (scaled by dimension)
// are treated as exact zeros.
double rank_threshold(const RVector& s, std::size_t m, std::size_t n) {
  if (s.size() == 0) return 0.0;
  return static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon() * s(0) *
         4.0;
}

Svd compute_svd(const CMatrix& a, bool real) {
  const std::size_t m = static_cast<std::size_t>(a.rows());
  const std::size_t n = static_cast<std::size_t>(a.cols());
  Svd out;
  out.real = real;
  if (real) {
    const RMatrix ar = a.real();
    Eigen::BDCSVD<RMatrix> svd(ar, Eigen::ComputeThinU | Eigen::ComputeFullV);
    out.u = svd.matrixU().cast<Complex>();
    out.s = svd.singularValues();
    out.v = svd.matrixV().cast<Complex>();
  } else {
    Eigen::BDCSVD<CMatrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeFullV);
    out.u = svd.matrixU();
    out.s = svd.singularValues();
    out.v = svd.matrixV();
  }
  const double thr = rank_threshold(out.s, m, n);
  for (Eigen::Index i = 0; i < out.s.size(); ++i)
    if (out.s(i) <= thr) out.s(i) = 0.0;
  return out;
}

bool all_real(const CMatrix& a) {
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (a(i, j).imag() != 0.0) return false;
  return true;
}

}  // namespace

std::size_t Svd::rank() const {
  return static_cast<std::size_t>((s.array() > 0.0).count());
}

RVector Svd::spectral_values() const {
  RVector out = RVector::Zero(v.cols());
  out.head(s.size()) = s;
  return out;
}

LinearOperator::LinearOperator(std::string id, std::size_t in_dim, std::size_t out_dim, Map apply,
                               Map adjoint, Traits traits)
    : impl_(std::make_shared<const Impl>(Impl{std::move(id), in_dim, out_dim, std::move(apply),
                                              std::move(adjoint), traits, std::nullopt,
                                              std::nullopt})) {
  if (in_dim == 0 || out_dim == 0) throw ArgumentError("LinearOperator: zero dimension");
}

LinearOperator LinearOperator::dense(std::string id, CMatrix matrix, bool with_svd) {
  const auto m = static_cast<std::size_t>(matrix.rows());
  const auto n = static_cast<std::size_t>(matrix.cols());
  if (m == 0 || n == 0) throw ArgumentError("LinearOperator::dense: empty matrix");
  auto shared = std::make_shared<const CMatrix>(std::move(matrix));
  Traits traits;
  traits.real = all_real(*shared);
  Impl impl{std::move(id),
            n,
            m,
            [shared](const CVector& x) -> CVector { return (*shared) * x; },
            [shared](const CVector& y) -> CVector { return shared->adjoint() * y; },
            traits,
            *shared,
            std::nullopt};
  LinearOperator op(std::make_shared<const Impl>(std::move(impl)));
  return with_svd ? op.with_svd() : op;
}

LinearOperator LinearOperator::dense(std::string id, const RMatrix& matrix, bool with_svd) {
  return dense(std::move(id), CMatrix(matrix.cast<Complex>()), with_svd);
}

CVector LinearOperator::apply(const CVector& x) const {
  if (static_cast<std::size_t>(x.size()) != in_dim()) {
    throw ShapeError("LinearOperator::apply: input length != in_dim for " + id());
  }
  return impl_->apply(x);
}

CVector LinearOperator::adjoint(const CVector& y) const {
  if (static_cast<std::size_t>(y.size()) != out_dim()) {
    throw ShapeError("LinearOperator::adjoint: input length != out_dim for " + id());
  }
  return impl_->adjoint(y);
}

LinearOperator LinearOperator::with_svd() const {
  if (impl_->svd) return *this;
  if (!impl_->matrix) {
    throw CapabilityError("operator " + id() + " is matrix-free; no dense SVD available");
  }
  if (in_dim() * out_dim() > kMaxDenseSvdEntries) {
    throw SizeError("operator " + id() + " is too large for a dense SVD");
  }
  Impl impl = *impl_;
  impl.svd = compute_svd(*impl_->matrix, impl_->traits.real);
  return LinearOperator(std::make_shared<const Impl>(std::move(impl)));
}

void CgOptions::validate() const {
  if (!(tol > 0.0)) throw ArgumentError("CgOptions: tol must be > 0");
  if (max_iters < 1) throw ArgumentError("CgOptions: max_iters must be >= 1");
  if (!(regularizer >= 0.0)) throw ArgumentError("CgOptions: regularizer must be >= 0");
}

CVector pinv_apply_cg(const LinearOperator& op, const CVector& y, const CgOptions& opts,
                      CgStats* stats) {
  opts.validate();
  if (static_cast<std::size_t>(y.size()) != op.out_dim()) {
    throw ShapeError("pinv_apply: y length != out_dim");
  }
  const CVector b = op.adjoint(y);
  const double b_norm = b.norm();
  CVector x = CVector::Zero(static_cast<Eigen::Index>(op.in_dim()));
  if (b_norm == 0.0) {
    if (stats) *stats = {0, 0.0};
    return x;
  }
  // Starting from zero keeps every iterate in range(A^H), so the limit is the
  // minimum-norm least-squares solution.
  CVector r = b;
  CVector p = r;
  double rr = r.squaredNorm();
  for (std::size_t k = 1; k <= opts.max_iters; ++k) {
    CVector q = op.adjoint(op.apply(p));
    if (opts.regularizer > 0.0) q += opts.regularizer * p;
    const double pq = p.dot(q).real();
    if (!(pq > 0.0)) {
      // p lies in the null space of A^H A: nothing left to reduce.
      if (stats) *stats = {k, std::sqrt(rr) / b_norm};
      if (std::sqrt(rr) <= opts.tol * b_norm) return x;
      throw ConvergenceError("pinv_apply: CG breakdown", std::sqrt(rr) / b_norm);
    }
    const double step = rr / pq;
    x += step * p;
    r -= step * q;
    const double rr_next = r.squaredNorm();
    if (!std::isfinite(rr_next)) throw DivergenceError("pinv_apply: non-finite CG residual");
    if (std::sqrt(rr_next) <= opts.tol * b_norm) {
      if (stats) *stats = {k, std::sqrt(rr_next) / b_norm};
      return x;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  if (stats) *stats = {opts.max_iters, std::sqrt(rr) / b_norm};
  throw ConvergenceError("pinv_apply: CG did not converge within max_iters for " + op.id(),
                         std::sqrt(rr) / b_norm);
}

CVector pinv_apply_svd(const LinearOperator& op, const CVector& y, double regularizer) {
  const Svd* svd = op.svd();
  if (!svd) throw CapabilityError("pinv_apply_svd: operator " + op.id() + " has no SVD");
  if (static_cast<std::size_t>(y.size()) != op.out_dim()) {
    throw ShapeError("pinv_apply: y length != out_dim");
  }
  CVector coeff = svd->u.adjoint() * y;
  for (Eigen::Index i = 0; i < coeff.size(); ++i) {
    const double s = svd->s(i);
    coeff(i) = s > 0.0 ? coeff(i) * (s / (s * s + regularizer)) : Complex(0.0);
  }
  return svd->v.leftCols(coeff.size()) * coeff;
}

CVector pinv_apply(const LinearOperator& op, const CVector& y, const CgOptions& opts) {
  if (op.isometry()) {
    if (static_cast<std::size_t>(y.size()) != op.out_dim()) {
      throw ShapeError("pinv_apply: y length != out_dim");
    }
    CVector x = op.adjoint(y);
    if (opts.regularizer > 0.0) x /= (1.0 + opts.regularizer);
    return x;
  }
  if (op.svd()) return pinv_apply_svd(op, y, opts.regularizer);
  return pinv_apply_cg(op, y, opts);
}

CVector projector_range_rows(const LinearOperator& op, const CVector& x, const CgOptions& opts) {
  return pinv_apply(op, op.apply(x), opts);
}

LinearOperator make_identity_operator(std::size_t n) {
  LinearOperator::Traits traits;
  traits.isometry = true;
  traits.real = true;
  auto id = [](const CVector& v) -> CVector { return v; };
  return LinearOperator("identity:n=" + std::to_string(n), n, n, id, id, traits);
}

LinearOperator make_fourier_operator(std::size_t n_side, std::size_t factor) {
  if (n_side < 1) throw ArgumentError("make_fourier_operator: n_side must be >= 1");
  if (factor < 1) throw ArgumentError("make_fourier_operator: factor must be >= 1");
  const std::size_t big = n_side * factor;
  LinearOperator::Traits traits;
  traits.isometry = true;
  auto apply = [n_side, factor](const CVector& x) -> CVector {
    ComplexField img(n_side, n_side, std::vector<Complex>(x.data(), x.data() + x.size()));
    ComplexField spec = dft2_unitary(pad_to_oversampled(img, factor));
    return Eigen::Map<const CVector>(spec.values().data(),
                                     static_cast<Eigen::Index>(spec.size()));
  };
  auto adjoint = [n_side, big](const CVector& y) -> CVector {
    ComplexField spec(big, big, std::vector<Complex>(y.data(), y.data() + y.size()));
    ComplexField img = crop_top_left(idft2_unitary(spec), n_side, n_side);
    return Eigen::Map<const CVector>(img.values().data(), static_cast<Eigen::Index>(img.size()));
  };
  return LinearOperator(
      "fourier:n_side=" + std::to_string(n_side) + ",factor=" + std::to_string(factor),
      n_side * n_side, big * big, apply, adjoint, traits);
}

LinearOperator make_random_transmission_operator(std::size_t m, std::size_t n,
                                                 std::uint64_t seed) {
  if (n < 1 || m < n) throw ArgumentError("transmission operator requires m >= n >= 1");
  constexpr std::size_t kMaxEntries = std::size_t{1} << 28;
  if (m > kMaxEntries / n) throw SizeError("transmission operator dimensions overflow");
  Rng rng(seed, 0);
  CMatrix a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const double scale = 1.0 / std::sqrt(2.0 * static_cast<double>(m));
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double re = rng.normal();
      const double im = rng.normal();
      a(i, j) = Complex(re, im) * scale;
    }
  return LinearOperator::dense("transmission:m=" + std::to_string(m) + ",n=" +
                                   std::to_string(n) + ",seed=" + std::to_string(seed),
                               std::move(a));
}

double adjoint_mismatch(const LinearOperator& op, Rng& rng, std::size_t probes) {
  double worst = 0.0;
  for (std::size_t k = 0; k < probes; ++k) {
    const CVector x = random_complex_vector(op.in_dim(), rng);
    const CVector y = random_complex_vector(op.out_dim(), rng);
    const CVector ax = op.apply(x);
    const Complex lhs = y.dot(ax);  // <Ax, y> = y^H A x
    const Complex rhs = op.adjoint(y).dot(x);
    const double scale = ax.norm() * y.norm();
    worst = std::max(worst, std::abs(lhs - rhs) / (scale > 0.0 ? scale : 1.0));
  }
  return worst;
}

Tensor operator_to_tensor(const LinearOperator& op) {
  const CMatrix* a = op.matrix();
  if (!a) throw CapabilityError("operator " + op.id() + " is matrix-free; cannot serialize");
  Tensor t;
  t.dtype = Tensor::DType::f32_complex;
  t.dims = {static_cast<std::uint32_t>(a->rows()), static_cast<std::uint32_t>(a->cols())};
  t.values.reserve(2 * static_cast<std::size_t>(a->size()));
  for (Eigen::Index i = 0; i < a->rows(); ++i)
    for (Eigen::Index j = 0; j < a->cols(); ++j) {
      t.values.push_back(static_cast<float>((*a)(i, j).real()));
      t.values.push_back(static_cast<float>((*a)(i, j).imag()));
    }
  return t;
}

LinearOperator operator_from_tensor(std::string id, const Tensor& t) {
  if (t.dtype != Tensor::DType::f32_complex || t.dims.size() != 2) {
    throw FormatError("operator tensor must be a rank-2 complex DPRT");
  }
  CMatrix a(t.dims[0], t.dims[1]);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j, k += 2) a(i, j) = {t.values[k], t.values[k + 1]};
  return LinearOperator::dense(std::move(id), std::move(a));
}

CVector random_complex_vector(std::size_t n, Rng& rng) {
  CVector v(static_cast<Eigen::Index>(n));
  for (auto& z : v) {
    const double re = rng.normal();
    z = Complex(re, rng.normal());
  }
  return v;
}

RVector random_real_vector(std::size_t n, Rng& rng) {
  RVector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace ddrmpr
