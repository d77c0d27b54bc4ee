#include "ddrmpr/field_ops.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "ddrmpr/errors.hpp"

namespace ddrmpr {

RealImage::RealImage(std::size_t height, std::size_t width, std::size_t channels,
                     ValueRange range)
    : height_(height),
      width_(width),
      channels_(channels),
      range_(range),
      data_(height * width * channels, 0.0) {}

RealImage::RealImage(std::size_t height, std::size_t width, std::size_t channels,
                     std::vector<double> data, ValueRange range)
    : height_(height), width_(width), channels_(channels), range_(range), data_(std::move(data)) {
  if (data_.size() != height * width * channels) {
    throw ShapeError("RealImage: data length does not match H*W*C");
  }
}

RealImage RealImage::channel(std::size_t c) const {
  if (c >= channels_) throw ShapeError("RealImage::channel: index out of range");
  RealImage plane(height_, width_, 1, range_);
  for (std::size_t i = 0; i < pixels(); ++i) plane.data_[i] = data_[i * channels_ + c];
  return plane;
}

void RealImage::set_channel(std::size_t c, const RealImage& plane) {
  if (c >= channels_ || plane.channels_ != 1 || plane.height_ != height_ ||
      plane.width_ != width_) {
    throw ShapeError("RealImage::set_channel: plane shape mismatch");
  }
  for (std::size_t i = 0; i < pixels(); ++i) data_[i * channels_ + c] = plane.data_[i];
}

RealImage RealImage::from_channels(std::span<const RealImage> planes) {
  if (planes.empty()) throw ArgumentError("RealImage::from_channels: no planes");
  RealImage out(planes[0].height(), planes[0].width(), planes.size(), planes[0].range());
  for (std::size_t c = 0; c < planes.size(); ++c) out.set_channel(c, planes[c]);
  return out;
}

bool RealImage::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void RealImage::clamp_to_range() noexcept {
  const double lo = range_ == ValueRange::unit ? 0.0 : -1.0;
  for (double& v : data_) v = std::clamp(v, lo, 1.0);
}

ComplexField::ComplexField(std::size_t height, std::size_t width)
    : height_(height), width_(width), data_(height * width) {}

ComplexField::ComplexField(std::size_t height, std::size_t width, std::vector<Complex> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != height * width) {
    throw ShapeError("ComplexField: data length does not match H*W");
  }
}

bool ComplexField::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](const Complex& z) {
    return std::isfinite(z.real()) && std::isfinite(z.imag());
  });
}

SupportMask::SupportMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> inside)
    : height_(height), width_(width), inside_(std::move(inside)) {
  if (inside_.size() != height * width) throw ShapeError("SupportMask: size mismatch");
  if (count() == 0) throw ArgumentError("SupportMask: support is empty");
}

SupportMask SupportMask::top_left(std::size_t height, std::size_t width, std::size_t inner_h,
                                  std::size_t inner_w) {
  if (inner_h > height || inner_w > width) {
    throw ShapeError("SupportMask::top_left: inner block exceeds grid");
  }
  std::vector<std::uint8_t> inside(height * width, 0);
  for (std::size_t y = 0; y < inner_h; ++y)
    for (std::size_t x = 0; x < inner_w; ++x) inside[y * width + x] = 1;
  return SupportMask(height, width, std::move(inside));
}

SupportMask SupportMask::full(std::size_t height, std::size_t width) {
  return SupportMask(height, width, std::vector<std::uint8_t>(height * width, 1));
}

std::size_t SupportMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(inside_.begin(), inside_.end(), std::uint8_t{1}));
}

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
// Plans are created once per (shape, direction) under a lock and reused.
class PlanCache {
 public:
  fftw_plan get(std::size_t h, std::size_t w, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(h, w, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<fftw_complex> in(h * w), out(h * w);
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), in.data(),
                                      out.data(), sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

ComplexField transform(const ComplexField& field, int sign) {
  const std::size_t h = field.height(), w = field.width();
  if (h == 0 || w == 0) throw ShapeError("dft2: empty grid");
  std::vector<Complex> in(field.values().begin(), field.values().end());
  std::vector<Complex> out(h * w);
  fftw_execute_dft(plan_cache().get(h, w, sign), reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  for (auto& z : out) z *= scale;
  return ComplexField(h, w, std::move(out));
}

}  // namespace

ComplexField dft2_unitary(const RealImage& img) {
  if (img.channels() != 1) throw ShapeError("dft2_unitary: expected a single channel");
  return transform(to_complex(img), FFTW_FORWARD);
}

ComplexField dft2_unitary(const ComplexField& field) { return transform(field, FFTW_FORWARD); }

ComplexField idft2_unitary(const ComplexField& field) { return transform(field, FFTW_BACKWARD); }

RealImage pad_to_oversampled(const RealImage& img, std::size_t factor) {
  if (factor < 1) throw ArgumentError("pad_to_oversampled: factor must be >= 1");
  RealImage out(img.height() * factor, img.width() * factor, img.channels(), img.range());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

ComplexField pad_to_oversampled(const ComplexField& field, std::size_t factor) {
  if (factor < 1) throw ArgumentError("pad_to_oversampled: factor must be >= 1");
  ComplexField out(field.height() * factor, field.width() * factor);
  for (std::size_t y = 0; y < field.height(); ++y)
    for (std::size_t x = 0; x < field.width(); ++x) out.at(y, x) = field.at(y, x);
  return out;
}

RealImage crop_top_left(const RealImage& img, std::size_t height, std::size_t width) {
  if (height > img.height() || width > img.width()) {
    throw ShapeError("crop_top_left: crop exceeds image");
  }
  RealImage out(height, width, img.channels(), img.range());
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

ComplexField crop_top_left(const ComplexField& field, std::size_t height, std::size_t width) {
  if (height > field.height() || width > field.width()) {
    throw ShapeError("crop_top_left: crop exceeds field");
  }
  ComplexField out(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) out.at(y, x) = field.at(y, x);
  return out;
}

RealImage magnitude(const ComplexField& field) {
  RealImage out(field.height(), field.width(), 1);
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = std::abs(field[i]);
  return out;
}

RealImage real_part(const ComplexField& field) {
  RealImage out(field.height(), field.width(), 1);
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = field[i].real();
  return out;
}

ComplexField to_complex(const RealImage& img) {
  if (img.channels() != 1) throw ShapeError("to_complex: expected a single channel");
  ComplexField out(img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i];
  return out;
}

RealImage to_symmetric(const RealImage& unit) {
  RealImage out = unit;
  for (double& v : out.values()) v = 2.0 * v - 1.0;
  out.set_range(ValueRange::symmetric);
  return out;
}

RealImage to_unit(const RealImage& symmetric) {
  RealImage out = symmetric;
  for (double& v : out.values()) v = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
  out.set_range(ValueRange::unit);
  return out;
}

double squared_norm(std::span<const double> v) noexcept {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

double squared_norm(std::span<const Complex> v) noexcept {
  double s = 0.0;
  for (const Complex& z : v) s += std::norm(z);
  return s;
}

}  // namespace ddrmpr
