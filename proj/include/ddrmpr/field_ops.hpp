#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ddrmpr {

using Complex = std::complex<double>;

/// Declared value range of a RealImage. Unit images live in [0, 1] (what the
/// phase-retrieval constraints expect); symmetric images live in [-1, 1]
/// (what diffusion denoisers are conditioned on).
enum class ValueRange : std::uint8_t { unit, symmetric };

/// Real-valued H x W x C grid, row-major with interleaved channels.
class RealImage {
 public:
  RealImage() = default;
  RealImage(std::size_t height, std::size_t width, std::size_t channels = 1,
            ValueRange range = ValueRange::unit);
  RealImage(std::size_t height, std::size_t width, std::size_t channels,
            std::vector<double> data, ValueRange range = ValueRange::unit);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t pixels() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  ValueRange range() const noexcept { return range_; }
  void set_range(ValueRange r) noexcept { range_ = r; }

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return data_[(y * width_ + x) * channels_ + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data_[(y * width_ + x) * channels_ + c];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& vector() const noexcept { return data_; }

  bool same_shape(const RealImage& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  RealImage channel(std::size_t c) const;
  void set_channel(std::size_t c, const RealImage& plane);
  static RealImage from_channels(std::span<const RealImage> planes);

  bool all_finite() const noexcept;
  /// Clamps every value into the declared range.
  void clamp_to_range() noexcept;

  friend bool operator==(const RealImage&, const RealImage&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  ValueRange range_ = ValueRange::unit;
  std::vector<double> data_;
};

/// Complex H x W grid, row-major.
class ComplexField {
 public:
  ComplexField() = default;
  ComplexField(std::size_t height, std::size_t width);
  ComplexField(std::size_t height, std::size_t width, std::vector<Complex> data);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  Complex& at(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  Complex at(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }
  Complex& operator[](std::size_t i) { return data_[i]; }
  Complex operator[](std::size_t i) const { return data_[i]; }

  std::span<Complex> values() noexcept { return data_; }
  std::span<const Complex> values() const noexcept { return data_; }

  bool all_finite() const noexcept;

  friend bool operator==(const ComplexField&, const ComplexField&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<Complex> data_;
};

/// Boolean support over a grid; at least one pixel must be inside.
class SupportMask {
 public:
  SupportMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> inside);

  /// Support covering the top-left `inner_h` x `inner_w` block of the grid.
  static SupportMask top_left(std::size_t height, std::size_t width,
                              std::size_t inner_h, std::size_t inner_w);
  static SupportMask full(std::size_t height, std::size_t width);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  bool inside(std::size_t i) const { return inside_[i] != 0; }
  bool inside(std::size_t y, std::size_t x) const { return inside_[y * width_ + x] != 0; }
  std::size_t count() const noexcept;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<std::uint8_t> inside_;
};

/// Unitary 2-D DFT (scale 1/sqrt(H*W)) of a single-channel image.
ComplexField dft2_unitary(const RealImage& img);
ComplexField dft2_unitary(const ComplexField& field);
/// Inverse of dft2_unitary; also its adjoint.
ComplexField idft2_unitary(const ComplexField& field);

/// Zero-pads every channel so each axis grows by `factor`; content stays in
/// the top-left corner.
RealImage pad_to_oversampled(const RealImage& img, std::size_t factor);
ComplexField pad_to_oversampled(const ComplexField& field, std::size_t factor);
RealImage crop_top_left(const RealImage& img, std::size_t height, std::size_t width);
ComplexField crop_top_left(const ComplexField& field, std::size_t height, std::size_t width);

/// Elementwise modulus as a single-channel image.
RealImage magnitude(const ComplexField& field);
RealImage real_part(const ComplexField& field);
ComplexField to_complex(const RealImage& img);

/// Range mapping between unit [0,1] and symmetric [-1,1] coordinates.
RealImage to_symmetric(const RealImage& unit);
/// (x + 1) / 2, clamped to [0, 1].
RealImage to_unit(const RealImage& symmetric);

double squared_norm(std::span<const double> v) noexcept;
double squared_norm(std::span<const Complex> v) noexcept;

}  // namespace ddrmpr
