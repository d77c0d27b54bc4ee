#include <doctest.h>

#include <cmath>

#include "ddrmpr/errors.hpp"
#include "ddrmpr/linops.hpp"
#include "oracles.hpp"

using namespace ddrmpr;

namespace {

double adjoint_gap(const LinearOperator& op, std::uint64_t seed) {
  Rng rng(seed);
  return adjoint_mismatch(op, rng, 10);
}

}  // namespace

TEST_CASE("diagonal operator pseudoinverse") {
  RMatrix a = RMatrix::Zero(2, 2);
  a(0, 0) = 2;
  a(1, 1) = 4;
  const auto op = LinearOperator::dense("diag", a);
  CVector y(2);
  y << 2.0, 8.0;
  const CVector x = pinv_apply(op, y);
  CHECK(std::abs(x(0) - 1.0) < 1e-9);
  CHECK(std::abs(x(1) - 2.0) < 1e-9);
}

TEST_CASE("orthonormal columns: pseudoinverse is the adjoint") {
  const CMatrix q = oracle::random_matrix(9, 4, 3, 0, true).householderQr().householderQ() *
                    CMatrix::Identity(9, 4);
  const auto op = LinearOperator::dense("q", q);
  Rng rng(1);
  const CVector y = random_complex_vector(9, rng);
  CHECK(oracle::rel_err(pinv_apply(op, y), q.adjoint() * y) < 1e-9);
}

TEST_CASE("CG and SVD pseudoinverses match a Jacobi-SVD oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Eigen::Index rank = seed % 3 == 2 ? 5 : 0;
    const CMatrix a = oracle::random_matrix(12, 8, seed, rank, seed % 2 == 1);
    const CMatrix pinv_ref = oracle::pinv(a);
    Rng rng(seed + 100);
    const CVector y = random_complex_vector(12, rng);
    const CVector ref = pinv_ref * y;
    const auto op = LinearOperator::dense("a", a);
    CgOptions cg;
    cg.tol = 1e-13;
    cg.max_iters = 500;
    CHECK(oracle::rel_err(pinv_apply_cg(op, y, cg), ref) < 1e-8);
    CHECK(oracle::rel_err(pinv_apply_svd(op.with_svd(), y), ref) < 1e-8);
    // Moore-Penrose residual property A^H (A x - y) = 0.
    const CVector x = pinv_apply(op, y, cg);
    CHECK((a.adjoint() * (a * x - y)).norm() / (a.adjoint() * y).norm() < 1e-8);
  }
}

TEST_CASE("SVD route without a materialized SVD is a capability error") {
  const auto op = LinearOperator::dense("a", oracle::random_matrix(4, 3, 1));
  CHECK_THROWS_AS(pinv_apply_svd(op, CVector::Zero(4)), CapabilityError);
}

TEST_CASE("non-convergence is reported with its residual") {
  const CMatrix a = oracle::random_matrix(30, 20, 4, 0, true);
  const auto op = LinearOperator::dense("a", a);
  Rng rng(2);
  CgOptions cg;
  cg.max_iters = 2;
  cg.tol = 1e-14;
  try {
    pinv_apply_cg(op, random_complex_vector(30, rng), cg);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual() > cg.tol);
  }
  CgOptions bad;
  bad.tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("SVD reconstructs the operator") {
  const CMatrix a = oracle::random_matrix(7, 11, 5, 3, true);
  const auto op = LinearOperator::dense("a", a, true);
  const Svd* s = op.svd();
  REQUIRE(s != nullptr);
  CHECK(s->rank() == 3);
  const auto r = static_cast<Eigen::Index>(s->s.size());
  const CMatrix rebuilt = s->u * s->s.asDiagonal() * s->v.leftCols(r).adjoint();
  CHECK((rebuilt - a).norm() / a.norm() < 1e-10);
  CHECK((s->v.adjoint() * s->v - CMatrix::Identity(11, 11)).norm() < 1e-10);
  for (Eigen::Index i = 1; i < r; ++i) CHECK(s->s(i - 1) >= s->s(i));
}

TEST_CASE("row-space projector") {
  SUBCASE("full-rank square operator projects to the identity") {
    const CMatrix a = oracle::random_matrix(6, 6, 8);
    const auto op = LinearOperator::dense("a", a);
    Rng rng(3);
    const CVector x = random_complex_vector(6, rng);
    CHECK(oracle::rel_err(projector_range_rows(op, x), x) < 1e-8);
  }
  SUBCASE("a zero column annihilates its coordinate") {
    CMatrix a = oracle::random_matrix(8, 5, 9);
    a.col(2).setZero();
    const auto op = LinearOperator::dense("a", a);
    Rng rng(4);
    const CVector x = random_complex_vector(5, rng);
    const CVector p = projector_range_rows(op, x);
    CHECK(std::abs(p(2)) < 1e-9);
    CHECK(std::abs(p(0) - x(0)) < 1e-8);
  }
  SUBCASE("rank-4 10x6 matches the V-basis projector, idempotent, self-adjoint") {
    const CMatrix a = oracle::random_matrix(10, 6, 10, 4);
    Eigen::JacobiSVD<CMatrix> js(a, Eigen::ComputeFullV);
    const CMatrix v4 = js.matrixV().leftCols(4);
    const CMatrix proj = v4 * v4.adjoint();
    for (const auto& op : {LinearOperator::dense("a", a), LinearOperator::dense("a", a, true)}) {
      Rng rng(5);
      CgOptions cg;
      cg.tol = 1e-13;
      cg.max_iters = 500;
      const CVector x = random_complex_vector(6, rng), z = random_complex_vector(6, rng);
      const CVector px = projector_range_rows(op, x, cg);
      CHECK(oracle::rel_err(px, proj * x) < 1e-8);
      CHECK(oracle::rel_err(projector_range_rows(op, px, cg), px) < 1e-8);
      const Complex lhs = z.dot(px), rhs = projector_range_rows(op, z, cg).dot(x);
      CHECK(std::abs(lhs - rhs) < 1e-8 * x.norm() * z.norm());
    }
  }
}

TEST_CASE("Fourier operator is a matrix-free isometry matching the padded DFT") {
  const auto op = make_fourier_operator(3, 2);
  CHECK(op.isometry());
  CHECK(op.matrix() == nullptr);
  CHECK(op.in_dim() == 9);
  CHECK(op.out_dim() == 36);
  const CMatrix ref = oracle::dft_matrix(6, 6) * oracle::padding_matrix(3, 2).cast<Complex>();
  Rng rng(6);
  const CVector x = random_complex_vector(9, rng);
  CHECK(oracle::rel_err(op.apply(x), ref * x) < 1e-12);
  const CVector y = random_complex_vector(36, rng);
  CHECK(oracle::rel_err(op.adjoint(y), ref.adjoint() * y) < 1e-12);

  const auto op4 = make_fourier_operator(4, 2);
  const CVector x4 = oracle::as_cvector(oracle::random_image(4, 4, 1, 2));
  CHECK(oracle::rel_err(op4.adjoint(op4.apply(x4)), x4) < 1e-10);
  CHECK(op4.apply(x4).norm() == doctest::Approx(x4.norm()).epsilon(1e-12));
  CHECK(adjoint_gap(op4, 1) < 1e-8);
}

TEST_CASE("random transmission operator") {
  const auto a = make_random_transmission_operator(64, 16, 7);
  const auto b = make_random_transmission_operator(64, 16, 7);
  const auto c = make_random_transmission_operator(64, 16, 8);
  CHECK(*a.matrix() == *b.matrix());
  CHECK(*a.matrix() != *c.matrix());
  CHECK(adjoint_gap(a, 2) < 1e-8);
  CHECK_THROWS_AS(make_random_transmission_operator(4, 8, 0), ArgumentError);
  CHECK_THROWS_AS(make_random_transmission_operator(std::size_t{1} << 40, 1 << 20, 0), SizeError);
}

TEST_CASE("transmission column norms concentrate near 1") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto op = make_random_transmission_operator(4096, 256, seed);
    const RVector norms = op.matrix()->colwise().norm();
    CHECK(norms.minCoeff() > 0.9);
    CHECK(norms.maxCoeff() < 1.1);
  }
}

TEST_CASE("adjoint consistency across operator kinds") {
  CHECK(adjoint_gap(make_identity_operator(5), 0) < 1e-12);
  CHECK(adjoint_gap(LinearOperator::dense("r", oracle::random_matrix(5, 9, 3, 2, true)), 0) < 1e-8);
  CHECK(adjoint_gap(make_fourier_operator(5, 2), 0) < 1e-8);
}

TEST_CASE("dense operators round-trip through DPRT") {
  const auto op = make_random_transmission_operator(12, 5, 3);
  const auto back = operator_from_tensor("copy", decode_dprt(encode_dprt(operator_to_tensor(op))));
  CHECK(back.in_dim() == 5);
  CHECK(back.out_dim() == 12);
  CHECK((*back.matrix() - *op.matrix()).norm() / op.matrix()->norm() < 1e-6);
  CHECK_THROWS(operator_to_tensor(make_fourier_operator(3, 2)));
}

TEST_CASE("SVD materialization is bounded") {
  const auto big = LinearOperator::dense("big", CMatrix(CMatrix::Zero(1001, 1000)));
  CHECK_THROWS_AS(big.with_svd(), SizeError);
  CHECK_THROWS(make_fourier_operator(4, 2).with_svd());
}
