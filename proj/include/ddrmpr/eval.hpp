#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ddrmpr/field_ops.hpp"

namespace ddrmpr {

/// Reported in place of +infinity when two images are identical.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE), capped at kPsnrCap.
double psnr(const RealImage& a, const RealImage& b, double peak = 1.0);
/// Uncapped; +infinity for identical images.
double psnr_raw(const RealImage& a, const RealImage& b, double peak = 1.0);
double mse(const RealImage& a, const RealImage& b);

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Gaussian-window SSIM over the valid region, averaged over channels.
double ssim(const RealImage& a, const RealImage& b, const SsimParams& params = {});

/// Element of the trivial-ambiguity group: optional reversal of both axes,
/// then a circular shift by (dy, dx), then a global sign.
struct Alignment {
  bool flipped = false;
  std::size_t dy = 0, dx = 0;
  int sign = 1;
  friend bool operator==(const Alignment&, const Alignment&) = default;
};

RealImage apply_alignment(const RealImage& img, const Alignment& a);

struct AlignedImage {
  RealImage image;
  Alignment alignment;
};

/// Maximizes the channel-summed cross-correlation with `reference` over flips
/// and circular shifts (FFT), and over the sign when `search_sign` is set.
/// Ties resolve to the earliest candidate: unflipped before flipped, +1 before
/// -1, shifts in row-major order.
AlignedImage align_ambiguities(const RealImage& recon, const RealImage& reference,
                               bool search_sign = false);

/// Same objective evaluated by brute force; reference for the FFT search.
AlignedImage align_ambiguities_exhaustive(const RealImage& recon, const RealImage& reference,
                                          bool search_sign = false);

struct MetricRow {
  std::string image_id;
  std::string method;
  double alpha = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  Alignment alignment;
};

/// CSV with header image_id,method,alpha,psnr,ssim,flipped,dy,dx. When
/// `mean_row` is set, one "mean" row per method follows the image rows.
std::string metrics_csv(const std::vector<MetricRow>& rows, bool mean_row = true);

}  // namespace ddrmpr
