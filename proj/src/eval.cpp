#include "ddrmpr/eval.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "ddrmpr/errors.hpp"

namespace ddrmpr {

namespace {

void require_same_shape(const RealImage& a, const RealImage& b, const char* who) {
  if (!a.same_shape(b)) throw ShapeError(std::string(who) + ": images differ in shape");
  if (a.empty()) throw ShapeError(std::string(who) + ": empty images");
}

RealImage reversed(const RealImage& img) {
  RealImage out = img;
  const std::size_t h = img.height(), w = img.width();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < img.channels(); ++c)
        out.at(y, x, c) = img.at(h - 1 - y, w - 1 - x, c);
  return out;
}

// Correlation c[d] = sum_p ref(p) src(p - d), summed over channels, for every
// circular shift d (row-major), up to a positive constant.
std::vector<double> correlation_fft(const RealImage& src, const RealImage& ref) {
  const std::size_t h = src.height(), w = src.width();
  std::vector<double> out(h * w, 0.0);
  for (std::size_t c = 0; c < src.channels(); ++c) {
    const ComplexField fs = dft2_unitary(to_complex(src.channel(c)));
    const ComplexField fr = dft2_unitary(to_complex(ref.channel(c)));
    ComplexField prod(h, w);
    for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = fr[i] * std::conj(fs[i]);
    const ComplexField corr = idft2_unitary(prod);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += corr[i].real();
  }
  return out;
}

std::vector<double> correlation_direct(const RealImage& src, const RealImage& ref) {
  const std::size_t h = src.height(), w = src.width();
  std::vector<double> out(h * w, 0.0);
  for (std::size_t dy = 0; dy < h; ++dy)
    for (std::size_t dx = 0; dx < w; ++dx) {
      double acc = 0.0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t c = 0; c < src.channels(); ++c)
            acc += ref.at(y, x, c) * src.at((y + h - dy) % h, (x + w - dx) % w, c);
      out[dy * w + dx] = acc;
    }
  return out;
}

template <typename CorrFn>
AlignedImage align_with(const RealImage& recon, const RealImage& ref, bool search_sign,
                        CorrFn&& corr) {
  require_same_shape(recon, ref, "align_ambiguities");
  const std::size_t w = recon.width();
  Alignment best;
  double best_score = -std::numeric_limits<double>::infinity();
  // Scores within this margin count as ties, so the earliest candidate wins
  // regardless of rounding in the FFT.
  const double margin =
      1e-12 * std::sqrt(squared_norm(recon.values()) * squared_norm(ref.values()));
  for (int f = 0; f < 2; ++f) {
    const std::vector<double> c = corr(f ? reversed(recon) : recon, ref);
    for (int s : {1, -1}) {
      if (s < 0 && !search_sign) continue;
      for (std::size_t i = 0; i < c.size(); ++i) {
        const double score = s * c[i];
        if (score > best_score + margin) {
          best_score = score;
          best = Alignment{f == 1, i / w, i % w, s};
        }
      }
    }
  }
  return AlignedImage{apply_alignment(recon, best), best};
}

}  // namespace

double mse(const RealImage& a, const RealImage& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr_raw(const RealImage& a, const RealImage& b, double peak) {
  if (!(peak > 0.0)) throw ArgumentError("psnr: peak must be > 0");
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / e);
}

double psnr(const RealImage& a, const RealImage& b, double peak) {
  return std::min(psnr_raw(a, b, peak), kPsnrCap);
}

double ssim(const RealImage& a, const RealImage& b, const SsimParams& p) {
  require_same_shape(a, b, "ssim");
  const std::size_t h = a.height(), w = a.width(), k = p.window;
  if (k == 0 || h < k || w < k) {
    throw ArgumentError("ssim: image smaller than the " + std::to_string(k) + "x" +
                        std::to_string(k) + " window");
  }
  std::vector<double> g(k);
  double gs = 0.0;
  const double mid = static_cast<double>(k - 1) / 2.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = static_cast<double>(i) - mid;
    g[i] = std::exp(-d * d / (2.0 * p.sigma * p.sigma));
    gs += g[i];
  }
  for (double& v : g) v /= gs;
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

  const std::size_t oh = h - k + 1, ow = w - k + 1;
  // Separable valid-region filter of one plane.
  auto filter = [&](const std::vector<double>& src) {
    std::vector<double> tmp(h * ow, 0.0), out(oh * ow, 0.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += g[j] * src[y * w + x + j];
        tmp[y * ow + x] = acc;
      }
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += g[j] * tmp[(y + j) * ow + x];
        out[y * ow + x] = acc;
      }
    return out;
  };

  double total = 0.0;
  for (std::size_t c = 0; c < a.channels(); ++c) {
    const std::vector<double> pa = a.channel(c).vector(), pb = b.channel(c).vector();
    std::vector<double> aa(pa.size()), bb(pa.size()), ab(pa.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter(pa), mu_b = filter(pb);
    const auto s_aa = filter(aa), s_bb = filter(bb), s_ab = filter(ab);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = s_aa[i] - mu_a[i] * mu_a[i];
      const double vb = s_bb[i] - mu_b[i] * mu_b[i];
      const double cov = s_ab[i] - mu_a[i] * mu_b[i];
      acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / static_cast<double>(a.channels());
}

RealImage apply_alignment(const RealImage& img, const Alignment& a) {
  const std::size_t h = img.height(), w = img.width();
  if (a.dy >= h || a.dx >= w) throw ArgumentError("alignment shift outside the grid");
  if (a.sign != 1 && a.sign != -1) throw ArgumentError("alignment sign must be +-1");
  const RealImage src = a.flipped ? reversed(img) : img;
  RealImage out = img;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < img.channels(); ++c)
        out.at(y, x, c) = a.sign * src.at((y + h - a.dy) % h, (x + w - a.dx) % w, c);
  return out;
}

AlignedImage align_ambiguities(const RealImage& recon, const RealImage& reference,
                               bool search_sign) {
  return align_with(recon, reference, search_sign, correlation_fft);
}

AlignedImage align_ambiguities_exhaustive(const RealImage& recon, const RealImage& reference,
                                          bool search_sign) {
  return align_with(recon, reference, search_sign, correlation_direct);
}

std::string metrics_csv(const std::vector<MetricRow>& rows, bool mean_row) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "image_id,method,alpha,psnr,ssim,flipped,dy,dx\n";
  struct Acc {
    double psnr = 0.0, ssim = 0.0, alpha = 0.0;
    std::size_t n = 0;
    bool same_alpha = true;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> acc;
  for (const auto& r : rows) {
    os << r.image_id << ',' << r.method << ',' << r.alpha << ',' << r.psnr << ',' << r.ssim << ','
       << (r.alignment.flipped ? 1 : 0) << ',' << r.alignment.dy << ',' << r.alignment.dx << '\n';
    auto [it, inserted] = acc.try_emplace(r.method);
    if (inserted) {
      order.push_back(r.method);
      it->second.alpha = r.alpha;
    }
    Acc& m = it->second;
    m.psnr += r.psnr;
    m.ssim += r.ssim;
    m.same_alpha = m.same_alpha && m.alpha == r.alpha;
    ++m.n;
  }
  if (mean_row) {
    for (const auto& method : order) {
      const Acc& m = acc[method];
      const double n = static_cast<double>(m.n);
      os << "mean," << method << ',';
      if (m.same_alpha) os << m.alpha;
      os << ',' << m.psnr / n << ',' << m.ssim / n << ",,,\n";
    }
  }
  return os.str();
}

}  // namespace ddrmpr
