#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "ddrmpr/rng.hpp"
#include "ddrmpr/tensor_io.hpp"

namespace ddrmpr {

using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using RVector = Eigen::VectorXd;
using RMatrix = Eigen::MatrixXd;

/// Dense SVD A = U diag(S) V^H.
///
/// `u` is m x r and `s` has r entries (descending, r = min(m, n)); `v` is the
/// full n x n unitary factor whose first r columns pair with `s`. Singular
/// values below the numerical rank threshold are stored as exact zeros, and
/// every index >= r has singular value zero.
struct Svd {
  CMatrix u;
  RVector s;
  CMatrix v;
  /// True when all three factors are real (the operator was real).
  bool real = false;

  std::size_t rank() const;
  /// Singular value for each of the n spectral indices (zero past r).
  RVector spectral_values() const;
};

struct OperatorTraits {
  /// A^H A = I, so the pseudoinverse is the adjoint.
  bool isometry = false;
  /// Every entry of the matrix is real.
  bool real = false;
};

/// Immutable linear map C^n -> C^m with its adjoint. Copies share state.
class LinearOperator {
 public:
  using Map = std::function<CVector(const CVector&)>;

  using Traits = OperatorTraits;

  LinearOperator(std::string id, std::size_t in_dim, std::size_t out_dim, Map apply, Map adjoint,
                 Traits traits = {});

  /// Dense operator; its SVD is computed immediately when `with_svd` is set.
  static LinearOperator dense(std::string id, CMatrix matrix, bool with_svd = false);
  static LinearOperator dense(std::string id, const RMatrix& matrix, bool with_svd = false);

  const std::string& id() const noexcept { return impl_->id; }
  std::size_t in_dim() const noexcept { return impl_->in_dim; }
  std::size_t out_dim() const noexcept { return impl_->out_dim; }
  bool isometry() const noexcept { return impl_->traits.isometry; }
  bool real() const noexcept { return impl_->traits.real; }

  CVector apply(const CVector& x) const;
  CVector adjoint(const CVector& y) const;

  const Svd* svd() const noexcept { return impl_->svd ? &*impl_->svd : nullptr; }
  const CMatrix* matrix() const noexcept { return impl_->matrix ? &*impl_->matrix : nullptr; }

  /// Copy of this operator with a materialized SVD. Requires a dense matrix
  /// with m*n <= kMaxDenseSvdEntries.
  LinearOperator with_svd() const;

  static constexpr std::size_t kMaxDenseSvdEntries = 1'000'000;

 private:
  struct Impl {
    std::string id;
    std::size_t in_dim;
    std::size_t out_dim;
    Map apply;
    Map adjoint;
    Traits traits;
    std::optional<CMatrix> matrix;
    std::optional<Svd> svd;
  };
  explicit LinearOperator(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<const Impl> impl_;
};

struct CgOptions {
  std::size_t max_iters = 200;
  /// Relative residual ||A^H(b - Ax) - lambda x|| / ||A^H b|| at which CG stops.
  double tol = 1e-10;
  /// Tikhonov lambda; 0 gives the Moore-Penrose pseudoinverse.
  double regularizer = 0.0;

  void validate() const;
};

struct CgStats {
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

/// Minimum-norm least-squares solution of A x = y. Isometries use the adjoint,
/// operators with a materialized SVD use V S^+ U^H y, everything else runs CG
/// on the normal equations.
CVector pinv_apply(const LinearOperator& op, const CVector& y, const CgOptions& opts = {});
/// Always the conjugate-gradient (CGNR) route.
CVector pinv_apply_cg(const LinearOperator& op, const CVector& y, const CgOptions& opts = {},
                      CgStats* stats = nullptr);
/// Always the SVD route; throws CapabilityError without a materialized SVD.
CVector pinv_apply_svd(const LinearOperator& op, const CVector& y, double regularizer = 0.0);

/// A^+ A x: orthogonal projection onto the row space of A.
CVector projector_range_rows(const LinearOperator& op, const CVector& x,
                             const CgOptions& opts = {});

LinearOperator make_identity_operator(std::size_t n);

/// Zero-pad an n_side x n_side image by `factor` per axis, then unitary DFT.
/// The input vector is the row-major image. Matrix-free isometry.
LinearOperator make_fourier_operator(std::size_t n_side, std::size_t factor = 2);

/// Dense m x n complex Gaussian matrix with i.i.d. entries of variance 1/m,
/// standing in for a calibrated scattering-medium transmission matrix.
LinearOperator make_random_transmission_operator(std::size_t m, std::size_t n,
                                                 std::uint64_t seed);

/// max_k |<A x_k, y_k> - <x_k, A^H y_k>| / (||A x_k|| ||y_k||) over random probes.
double adjoint_mismatch(const LinearOperator& op, Rng& rng, std::size_t probes = 10);

/// Dense operators round-trip through a complex [m, n] DPRT tensor.
Tensor operator_to_tensor(const LinearOperator& op);
LinearOperator operator_from_tensor(std::string id, const Tensor& t);

CVector random_complex_vector(std::size_t n, Rng& rng);
RVector random_real_vector(std::size_t n, Rng& rng);

}  // namespace ddrmpr
