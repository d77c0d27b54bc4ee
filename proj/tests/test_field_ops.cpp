#include <doctest.h>

#include <cmath>

#include "ddrmpr/errors.hpp"
#include "ddrmpr/field_ops.hpp"
#include "oracles.hpp"

using namespace ddrmpr;

namespace {

double max_abs_diff(const ComplexField& a, const ComplexField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ComplexField random_field(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  ComplexField f(h, w);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = Complex(rng.normal(), rng.normal());
  return f;
}

}  // namespace

TEST_CASE("RealImage stores H*W*C values and validates its shape") {
  RealImage img(2, 3, 3);
  CHECK(img.size() == 18);
  CHECK(img.pixels() == 6);
  img.at(1, 2, 1) = 0.5;
  CHECK(img[(1 * 3 + 2) * 3 + 1] == 0.5);
  CHECK_THROWS_AS(RealImage(2, 2, 1, std::vector<double>(3)), ShapeError);
}

TEST_CASE("clamping honors the declared range tag") {
  RealImage u(1, 3, 1, {-0.5, 0.5, 1.5}, ValueRange::unit);
  u.clamp_to_range();
  CHECK(u.vector() == std::vector<double>{0.0, 0.5, 1.0});
  RealImage s(1, 3, 1, {-2.0, 0.25, 2.0}, ValueRange::symmetric);
  s.clamp_to_range();
  CHECK(s.vector() == std::vector<double>{-1.0, 0.25, 1.0});
}

TEST_CASE("channels split and stack") {
  const RealImage img = oracle::random_image(4, 5, 3, 1);
  std::vector<RealImage> planes;
  for (std::size_t c = 0; c < 3; ++c) planes.push_back(img.channel(c));
  CHECK(planes[2].at(3, 4) == img.at(3, 4, 2));
  CHECK(RealImage::from_channels(planes) == img);
}

TEST_CASE("SupportMask needs at least one inside pixel") {
  CHECK_THROWS(SupportMask(2, 2, std::vector<std::uint8_t>(4, 0)));
  const SupportMask m = SupportMask::top_left(6, 6, 3, 3);
  CHECK(m.count() == 9);
  CHECK(m.inside(2, 2));
  CHECK_FALSE(m.inside(3, 0));
}

TEST_CASE("dft of a padded delta is flat at 1/4") {
  RealImage d(2, 2, 1, {1.0, 0.0, 0.0, 0.0});
  const ComplexField f = dft2_unitary(pad_to_oversampled(d, 2));
  REQUIRE(f.size() == 16);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(f[i]) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("dft of zero is zero") {
  const ComplexField f = dft2_unitary(RealImage(4, 4));
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(f[i]) == 0.0);
}

TEST_CASE("Parseval on random 8x8 inputs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RealImage x = oracle::random_image(8, 8, 1, seed);
    const ComplexField f = dft2_unitary(x);
    const double ex = squared_norm(x.values()), ef = squared_norm(f.values());
    CHECK(std::abs(ef - ex) / ex < 1e-12);
  }
}

TEST_CASE("dft matches an explicit DFT matrix on grids up to 8x8") {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{4, 4}, {3, 5}, {8, 8}, {1, 7}, {6, 2}}) {
    const ComplexField x = random_field(h, w, h * 31 + w);
    CVector v(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) v(static_cast<Eigen::Index>(i)) = x[i];
    const CVector ref = oracle::dft_matrix(h, w) * v;
    const ComplexField got = dft2_unitary(x);
    CVector g(static_cast<Eigen::Index>(got.size()));
    for (std::size_t i = 0; i < got.size(); ++i) g(static_cast<Eigen::Index>(i)) = got[i];
    CHECK(oracle::rel_err(g, ref) < 1e-10);
    // Inverse is the adjoint of the explicit matrix.
    const ComplexField back = idft2_unitary(got);
    CHECK(max_abs_diff(back, x) < 1e-12);
    const CVector inv_ref = oracle::dft_matrix(h, w).adjoint() * v;
    const ComplexField inv = idft2_unitary(x);
    CVector iv(static_cast<Eigen::Index>(inv.size()));
    for (std::size_t i = 0; i < inv.size(); ++i) iv(static_cast<Eigen::Index>(i)) = inv[i];
    CHECK(oracle::rel_err(iv, inv_ref) < 1e-10);
  }
}

TEST_CASE("round trip of a random 8x8 image") {
  const RealImage x = oracle::random_image(8, 8, 1, 3);
  const ComplexField back = idft2_unitary(dft2_unitary(x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - Complex(x[i], 0.0)) < 1e-12);
}

TEST_CASE("inverse dft of a constant is a scaled delta") {
  const double c = 0.7;
  ComplexField f(4, 4);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = c;
  const ComplexField g = idft2_unitary(f);
  CHECK(std::abs(g[0]) == doctest::Approx(c * 4.0));
  for (std::size_t i = 1; i < g.size(); ++i) CHECK(std::abs(g[i]) < 1e-14);
}

TEST_CASE("padding keeps content top-left and preserves energy") {
  RealImage ones(3, 3);
  for (std::size_t i = 0; i < ones.size(); ++i) ones[i] = 1.0;
  const RealImage p = pad_to_oversampled(ones, 2);
  CHECK(p.height() == 6);
  CHECK(p.width() == 6);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) CHECK(p.at(y, x) == ((y < 3 && x < 3) ? 1.0 : 0.0));
  CHECK(pad_to_oversampled(ones, 1) == ones);
  const RealImage r = oracle::random_image(5, 5, 3, 9);
  CHECK(squared_norm(pad_to_oversampled(r, 2).values()) ==
        doctest::Approx(squared_norm(r.values())).epsilon(1e-15));
  CHECK(crop_top_left(pad_to_oversampled(r, 2), 5, 5) == r);
  CHECK_THROWS(pad_to_oversampled(r, 0));
}

TEST_CASE("magnitude is the elementwise modulus") {
  ComplexField f(2, 3);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = Complex(3.0, 4.0);
  const RealImage m = magnitude(f);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == 5.0);
  const RealImage z = magnitude(ComplexField(2, 2));
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);
  const ComplexField r = random_field(5, 5, 4);
  const RealImage mr = magnitude(r);
  for (std::size_t i = 0; i < r.size(); ++i) {
    CHECK(mr[i] * mr[i] == doctest::Approx(r[i].real() * r[i].real() + r[i].imag() * r[i].imag()));
  }
}

TEST_CASE("padded Fourier magnitudes are invariant to a global sign flip") {
  const RealImage x = oracle::random_image(6, 6, 1, 12);
  RealImage neg = x;
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
  neg.set_range(ValueRange::symmetric);
  const RealImage a = magnitude(dft2_unitary(pad_to_oversampled(x, 2)));
  const RealImage b = magnitude(dft2_unitary(pad_to_oversampled(neg, 2)));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-14);
}

TEST_CASE("multi-channel input to the DFT is rejected") {
  CHECK_THROWS_AS(dft2_unitary(RealImage(4, 4, 3)), ShapeError);
}

TEST_CASE("range mapping between unit and symmetric coordinates") {
  RealImage u(1, 3, 1, {0.0, 0.5, 1.0});
  const RealImage s = to_symmetric(u);
  CHECK(s.vector() == std::vector<double>{-1.0, 0.0, 1.0});
  CHECK(s.range() == ValueRange::symmetric);
  CHECK(to_unit(s) == u);
  RealImage wild(1, 2, 1, {-3.0, 3.0}, ValueRange::symmetric);
  CHECK(to_unit(wild).vector() == std::vector<double>{0.0, 1.0});
}
