#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ddrmpr/ddrm_pr.hpp"

namespace ddrmpr::cli {

/// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kSelftestFailed = 1,
  kInputError = 2,
  kDenoiserError = 3,
  kNumericalError = 4,
};

/// Everything a run depends on. Each field maps to one `--key` flag and one
/// `key = value` line of a config file.
struct RunConfig {
  std::string task;
  std::vector<std::string> input;
  std::vector<std::string> reference;
  std::string out = ".";
  double alpha = 0.0;
  std::size_t factor = 2;
  double eta;
  double eta_b;
  std::size_t steps;
  std::size_t t_init;
  std::size_t n_avg;
  std::uint64_t seed = 0;
  std::string denoiser = "shrinkage";
  /// 0 means one worker per logical core.
  std::size_t jobs = 0;
  double beta;
  std::size_t inner_iters;
  std::size_t num_inits;
  std::size_t short_iters;
  std::size_t final_iters;
  std::string mixing = "linear";
  bool nonneg = true;
  /// "fourier", "random:M[:SEED]" or a path to a complex [m, n] DPRT matrix.
  std::string op = "fourier";
  std::string grid;
  std::string method;
  bool align = true;
  /// Raster extension for reconstructions: png, pgm or ppm.
  std::string format = "png";

  RunConfig();
};

using Settings = std::vector<std::pair<std::string, std::string>>;

/// Every key accepted by apply_settings, in canonical order.
const std::vector<std::string>& setting_keys();

/// Applies one layer of settings. List keys (input, reference) given in the
/// layer replace the previous list; repeated occurrences append.
void apply_settings(RunConfig& cfg, const Settings& layer);

/// Full canonical settings; apply_settings(RunConfig{}, to_settings(c))
/// reproduces c.
Settings to_settings(const RunConfig& cfg);

/// Flat `key = value` text; '#' starts a comment.
Settings parse_config_text(const std::string& text);
std::string format_config_text(const Settings& settings);

PrPipelineConfig pipeline_config(const RunConfig& cfg);

/// Full command line entry point. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ddrmpr::cli
