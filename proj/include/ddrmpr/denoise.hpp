#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ddrmpr/field_ops.hpp"

namespace ddrmpr {

/// Input of one denoiser evaluation f(x_t) -> x0 estimate.
struct DenoiseRequest {
  /// Noisy iterate in variance-preserving coordinates, symmetric range.
  RealImage x_t;
  std::size_t t_index = 0;
  double sigma_t = 0.0;
  /// 1 / (1 + sigma_t^2).
  double alpha_t = 1.0;
};

/// Declared input geometry; a zero extent accepts any size on that axis.
struct DenoiserGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  bool accepts(const RealImage& img) const noexcept;
  friend bool operator==(const DenoiserGeometry&, const DenoiserGeometry&) = default;
};

enum class DenoiserKind : std::uint8_t { identity, gaussian, shrinkage, oracle, remote, custom };

std::string to_string(DenoiserKind kind);

/// Implementation side of a denoiser. Implementations must be safe to call
/// concurrently.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual RealImage denoise(const DenoiseRequest& req) const = 0;
  /// Defaults to mapping denoise() over the requests.
  virtual std::vector<RealImage> denoise_batch(std::span<const DenoiseRequest> reqs) const;
};

/// Immutable, shareable handle: validates requests, then clamps the result
/// into [-1, 1].
class DenoiserHandle {
 public:
  DenoiserHandle(std::string id, DenoiserKind kind, DenoiserGeometry geometry,
                 std::shared_ptr<const Denoiser> impl);

  const std::string& id() const noexcept { return id_; }
  DenoiserKind kind() const noexcept { return kind_; }
  const DenoiserGeometry& geometry() const noexcept { return geometry_; }

  RealImage denoise(const DenoiseRequest& req) const;
  std::vector<RealImage> denoise_batch(std::span<const DenoiseRequest> reqs) const;

 private:
  void validate(const DenoiseRequest& req) const;
  RealImage finish(const DenoiseRequest& req, RealImage out) const;

  std::string id_;
  DenoiserKind kind_;
  DenoiserGeometry geometry_;
  std::shared_ptr<const Denoiser> impl_;
};

/// clamp(x_t).
DenoiserHandle make_identity_denoiser(DenoiserGeometry geometry = {});

/// Circular Gaussian blur of x_t / sqrt(alpha_t) with standard deviation
/// `width_per_sigma` * sigma_t pixels (capped at `max_width`).
DenoiserHandle make_gaussian_denoiser(DenoiserGeometry geometry = {},
                                      double width_per_sigma = 4.0, double max_width = 16.0);

/// Soft thresholding at `threshold_scale` * sigma_t of the detail bands of an
/// undecimated orthonormal Haar transform (circular boundary) of
/// x_t / sqrt(alpha_t).
DenoiserHandle make_shrinkage_denoiser(DenoiserGeometry geometry = {},
                                       double threshold_scale = 1.0, std::size_t levels = 3);

/// Returns `truth` (symmetric range) for every request. Only constructible in
/// builds with DDRMPR_TEST_DENOISERS; throws CapabilityError otherwise.
DenoiserHandle make_oracle_denoiser(RealImage truth);
bool oracle_denoiser_available() noexcept;

DenoiserHandle make_custom_denoiser(std::string id, DenoiserGeometry geometry,
                                    std::shared_ptr<const Denoiser> impl);

struct RemoteOptions {
  int retries = 3;
  std::chrono::milliseconds timeout{30000};
};

/// DNZ1 client. `endpoint` is "host:port" or "stdio:COMMAND". Performs the
/// info handshake on construction and checks `schedule_T` when non-zero.
DenoiserHandle make_remote_denoiser(const std::string& endpoint, DenoiserGeometry geometry,
                                    std::size_t schedule_T = 0, RemoteOptions options = {});

/// Parses a CLI denoiser spec: "identity", "gaussian[:W]", "shrinkage[:C]",
/// "host:port" or "stdio:COMMAND".
DenoiserHandle parse_denoiser(const std::string& spec, DenoiserGeometry geometry,
                              std::size_t schedule_T = 0);

/// Undecimated orthonormal Haar analysis/synthesis (circular). Exposed for
/// tests: synthesis(analysis(x)) == x.
struct HaarBands {
  std::size_t height = 0, width = 0, levels = 0;
  std::vector<double> approx;
  /// Per level: LH, HL, HH bands, each height*width.
  std::vector<std::vector<double>> details;
};
HaarBands haar_analysis(std::span<const double> plane, std::size_t height, std::size_t width,
                        std::size_t levels);
std::vector<double> haar_synthesis(const HaarBands& bands);

/// Circular separable Gaussian blur of one plane.
std::vector<double> gaussian_blur_circular(std::span<const double> plane, std::size_t height,
                                           std::size_t width, double stddev);

}  // namespace ddrmpr
