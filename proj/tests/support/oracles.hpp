#pragma once

// Reference implementations used only by tests. They are deliberately naive
// (explicit matrices, Jacobi SVD, direct sums) so that they share no code
// path with the library routines they check.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>

#include "ddrmpr/field_ops.hpp"
#include "ddrmpr/linops.hpp"
#include "ddrmpr/rng.hpp"

namespace oracle {

using ddrmpr::CMatrix;
using ddrmpr::Complex;
using ddrmpr::CVector;
using ddrmpr::RMatrix;
using ddrmpr::RVector;

/// Unitary 2-D DFT of an h x w row-major grid as an explicit (hw) x (hw) matrix.
inline CMatrix dft_matrix(std::size_t h, std::size_t w) {
  const auto n = static_cast<Eigen::Index>(h * w);
  CMatrix f(n, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  for (std::size_t ky = 0; ky < h; ++ky)
    for (std::size_t kx = 0; kx < w; ++kx)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double ph = -2.0 * std::numbers::pi *
                            (static_cast<double>(ky * y) / static_cast<double>(h) +
                             static_cast<double>(kx * x) / static_cast<double>(w));
          f(static_cast<Eigen::Index>(ky * w + kx), static_cast<Eigen::Index>(y * w + x)) =
              std::polar(scale, ph);
        }
  return f;
}

/// Zero-padding of an n x n row-major image to (f n) x (f n), as a matrix.
inline RMatrix padding_matrix(std::size_t n, std::size_t factor) {
  const std::size_t big = n * factor;
  RMatrix p = RMatrix::Zero(static_cast<Eigen::Index>(big * big), static_cast<Eigen::Index>(n * n));
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      p(static_cast<Eigen::Index>(y * big + x), static_cast<Eigen::Index>(y * n + x)) = 1.0;
  return p;
}

/// Moore-Penrose pseudoinverse through a two-sided Jacobi SVD.
inline CMatrix pinv(const CMatrix& a) {
  Eigen::JacobiSVD<CMatrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const RVector s = svd.singularValues();
  const double tol = std::max(a.rows(), a.cols()) * (s.size() ? s(0) : 0.0) * 1e-12;
  RVector sinv = RVector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > tol) sinv(i) = 1.0 / s(i);
  return svd.matrixV() * sinv.asDiagonal() * svd.matrixU().adjoint();
}

inline CMatrix random_matrix(Eigen::Index m, Eigen::Index n, std::uint64_t seed,
                             Eigen::Index rank = 0, bool complex = false) {
  ddrmpr::Rng rng(seed);
  auto draw = [&](Eigen::Index r, Eigen::Index c) {
    CMatrix a(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i)
        a(i, j) = Complex(rng.normal(), complex ? rng.normal() : 0.0);
    return a;
  };
  if (rank == 0) return draw(m, n);
  return draw(m, rank) * draw(rank, n);
}

inline double rel_err(const CVector& a, const CVector& b) {
  const double d = b.norm();
  return (a - b).norm() / (d > 0.0 ? d : 1.0);
}

inline ddrmpr::RealImage random_image(std::size_t h, std::size_t w, std::size_t c,
                                      std::uint64_t seed) {
  ddrmpr::Rng rng(seed);
  ddrmpr::RealImage img(h, w, c);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  return img;
}

inline CVector as_cvector(const ddrmpr::RealImage& img) {
  CVector v(static_cast<Eigen::Index>(img.size()));
  for (std::size_t i = 0; i < img.size(); ++i) v(static_cast<Eigen::Index>(i)) = img[i];
  return v;
}

}  // namespace oracle
