#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ddrmpr/classic_pr.hpp"
#include "ddrmpr/ddrm_core.hpp"
#include "ddrmpr/denoise.hpp"
#include "ddrmpr/eval.hpp"
#include "ddrmpr/forward_model.hpp"

namespace ddrmpr {

/// Where the inner AP run of each step starts.
enum class InnerInit : std::uint8_t {
  /// The denoised estimate f(x_{t+1}) in unit range.
  denoised,
  /// The previous iterate x_{t+1}, mapped to unit range.
  previous_iterate,
};

struct PrPipelineConfig {
  SamplerConfig sampler;
  std::size_t hio_inner_iters = 100;
  RandomInitParams random_init;
  /// beta, method (hio / er / general), residual kind and CG options.
  ApOptions ap;
  InnerInit inner_init = InnerInit::denoised;
  /// Non-negativity in the space-domain constraints (Fourier problems).
  bool nonneg = true;
  /// Align each of the n_avg samples to the first before averaging.
  bool align_samples = true;
  /// Trajectories run concurrently on up to this many threads.
  std::size_t jobs = 1;

  void validate(const NoiseSchedule& schedule) const;
  nlohmann::json to_json() const;
  static PrPipelineConfig from_json(const nlohmann::json& j);
};

/// One phase retrieval instance: per-channel magnitudes of an operator acting
/// on an AP grid. The image occupies the top-left image_h x image_w block of
/// the grid (the whole grid unless constraints say otherwise).
struct PrProblem {
  std::vector<RVector> y;
  LinearOperator op;
  std::optional<ConstraintSet> constraints;
  std::size_t grid_h = 0, grid_w = 0;
  std::size_t image_h = 0, image_w = 0;

  std::size_t channels() const noexcept { return y.size(); }
  void validate() const;
  RealImage embed(const RealImage& plane) const;
  RealImage extract(const RealImage& grid_plane) const;
};

/// Fourier problem from per-channel measurement sets with fourier geometry:
/// square unitary DFT on the oversampled grid with a top-left support.
PrProblem fourier_problem(const std::vector<MeasurementSet>& msets, bool nonneg = true);

/// General problem: `op` acts on an image_h x image_w image (grid == image)
/// unless `constraints` carries a larger support grid.
PrProblem general_problem(std::vector<RVector> y, LinearOperator op, std::size_t image_h,
                          std::size_t image_w, std::optional<ConstraintSet> constraints = {});

/// AP reconstruction of one channel on the grid: HIO/ER with constraints, or
/// the unconstrained general projection.
ApResult ap_inner(const PrProblem& p, const RVector& y, const RealImage& grid_init,
                  std::size_t iters, const ApOptions& opts);

/// RandomInit of every channel, cropped to the image (unit range).
std::vector<RealImage> pr_random_init(const PrProblem& p, const PrPipelineConfig& cfg,
                                      std::vector<RandomInitResult>* details = nullptr);

/// 2x - 1 and clamp((x + 1) / 2), elementwise.
RVector to_vp(const RVector& unit);
RVector from_vp(const RVector& vp);

/// Maps a joint H x W x C iterate through the denoiser, replicating a
/// single channel to three when the denoiser declares three channels.
RVector pr_denoise(const DenoiserHandle& den, const RVector& x, ImageShape shape,
                   const NoiseSchedule& schedule, std::size_t t);

/// x' = f - to_vp(AP(|A from_vp(f)|)) + to_vp(RandomInit), per channel.
RVector pr_consistent(const PrProblem& p, const RVector& x_theta, const RVector& x_next,
                      const std::vector<RealImage>& cached_init, const PrPipelineConfig& cfg);

/// One transition state.t -> t. With eta_b == 0 the AP machinery is skipped.
DdrmState ddrm_pr_step(const DdrmState& state, std::size_t t, const PrProblem& p,
                       const PrPipelineConfig& cfg, const NoiseSchedule& schedule,
                       const DenoiserHandle& den, const std::vector<RealImage>& cached_init);

/// Averages samples pixelwise; aligns each to the first when `align` is set.
RealImage average_samples(const std::vector<RealImage>& samples, bool align = true,
                          bool search_sign = false);

struct PrResult {
  /// Averaged reconstruction, unit range, image_h x image_w x C.
  RealImage image;
  std::vector<RealImage> samples;
  /// Cached RandomInit per channel (unit range, image crop).
  std::vector<RealImage> random_init;
  std::vector<double> init_residuals;
};

/// Full pipeline on a prepared problem. `cached_init` skips RandomInit when given.
PrResult ddrm_pr_run(const PrProblem& p, const PrPipelineConfig& cfg,
                     const NoiseSchedule& schedule, const DenoiserHandle& den,
                     const std::vector<RealImage>* cached_init = nullptr);

/// Fourier phase retrieval from per-channel measurement sets.
PrResult ddrm_pr_reconstruct(const std::vector<MeasurementSet>& msets,
                             const PrPipelineConfig& cfg, const NoiseSchedule& schedule,
                             const DenoiserHandle& den);

/// General operator; AP method per cfg.ap.method.
PrResult ddrm_pr_general_reconstruct(const std::vector<RVector>& y, const LinearOperator& op,
                                     std::size_t image_h, std::size_t image_w,
                                     const PrPipelineConfig& cfg, const NoiseSchedule& schedule,
                                     const DenoiserHandle& den,
                                     std::optional<ConstraintSet> constraints = {});

nlohmann::json pr_manifest(const PrPipelineConfig& cfg, const NoiseSchedule& schedule,
                           const std::string& denoiser_id);

// ---------------------------------------------------------------------------
// Grid search

enum class Objective : std::uint8_t { psnr, ssim };

struct GridSpec {
  /// Axis name (eta, eta_b, steps, t_init, n_avg) and its candidate values,
  /// in declared order.
  std::vector<std::pair<std::string, std::vector<double>>> axes;
  Objective objective = Objective::psnr;

  void validate() const;
  std::size_t cell_count() const;
  /// JSON: {"objective": "psnr", "axes": {"eta": [..], ...}} (key order kept)
  /// or {"axes": [{"name": .., "values": [..]}, ...]}.
  static GridSpec parse(const std::string& json_text);
};

struct ValidationItem {
  std::string id;
  RealImage truth;
  PrProblem problem;
};

struct GridCell {
  std::vector<double> values;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double seconds = 0.0;
  bool failed = false;
  std::string error;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;
  PrPipelineConfig best_config;
  bool any_success = false;
};

PrPipelineConfig apply_grid_cell(const PrPipelineConfig& base, const GridSpec& grid,
                                 const std::vector<double>& values);

/// Evaluates every cell with base.sampler.seed; argmax of the mean objective,
/// ties to the earliest cell; failed cells are excluded. Scores are computed
/// after aligning each reconstruction to its ground truth. Cells run
/// concurrently on `jobs` threads.
GridResult grid_search(const GridSpec& grid, const std::vector<ValidationItem>& val,
                       const PrPipelineConfig& base, const NoiseSchedule& schedule,
                       const DenoiserHandle& den, std::size_t jobs = 1);

/// One row per cell: axis values, mean_psnr, mean_ssim, seconds, status.
std::string grid_csv(const GridSpec& grid, const GridResult& result);

}  // namespace ddrmpr
