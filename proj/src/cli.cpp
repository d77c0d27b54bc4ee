#include "ddrmpr/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>

#include "ddrmpr/errors.hpp"
#include "ddrmpr/forward_model.hpp"
#include "ddrmpr/image_io.hpp"
#include "ddrmpr/parallel.hpp"
#include "ddrmpr/selftest.hpp"
#include "ddrmpr/tensor_io.hpp"

namespace ddrmpr::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

RunConfig::RunConfig() {
  const PrPipelineConfig d;
  eta = d.sampler.eta;
  eta_b = d.sampler.eta_b;
  steps = d.sampler.steps;
  t_init = d.sampler.t_init;
  n_avg = d.sampler.n_avg;
  beta = d.ap.beta;
  inner_iters = d.hio_inner_iters;
  num_inits = d.random_init.num_inits;
  short_iters = d.random_init.short_iters;
  final_iters = d.random_init.final_iters;
  mixing = d.sampler.mixing == NoiseMixing::exact ? "exact" : "linear";
}

namespace {

const char* const kTasks[] = {"simulate", "hio",      "ddrm-pr", "ddrm-pr-general",
                              "evaluate", "gridsearch", "selftest"};

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ArgumentError("--" + key + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ArgumentError("--" + key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ArgumentError("--" + key + ": expected true or false, got '" + s + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool is_list_key(const std::string& key) { return key == "input" || key == "reference"; }

// Converts filesystem and JSON failures into library errors so that exit
// codes stay uniform.
template <typename Fn>
auto guarded_io(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const fs::filesystem_error& e) {
    throw IoError(what + ": " + e.what());
  } catch (const json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  guarded_io("cannot create output directory " + dir.string(), [&] {
    fs::create_directories(dir);
    return 0;
  });
  if (!fs::is_directory(dir)) throw IoError("output path is not a directory: " + dir.string());
}

std::string file_hash(const fs::path& p) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(p);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) h = (h ^ b) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::size_t resolve_jobs(const RunConfig& cfg) { return cfg.jobs ? cfg.jobs : default_jobs(); }

bool has_ext(const fs::path& p, const char* ext) { return p.extension() == ext; }

RealImage read_any_image(const fs::path& p) {
  if (has_ext(p, ".dprt")) return image_from_tensor(read_dprt(p));
  return read_image(p);
}

// ---------------------------------------------------------------------------
// Measurements on disk: `<stem>.json` + `<stem>.dprt` per channel, with
// multi-channel images stored as `<stem>_c0`, `<stem>_c1`, ...

struct MeasuredImage {
  std::string name;
  std::vector<fs::path> stems;
  std::vector<MeasurementSet> channels;
};

fs::path strip_measurement_ext(const fs::path& p) {
  if (has_ext(p, ".json") || has_ext(p, ".dprt")) return fs::path(p).replace_extension();
  return p;
}

MeasuredImage load_measured(const std::string& input) {
  const fs::path base = strip_measurement_ext(input);
  MeasuredImage m;
  m.name = base.filename().string();
  auto exists = [](const fs::path& stem) {
    return fs::exists(fs::path(stem.string() + ".json"));
  };
  if (exists(base)) {
    m.stems.push_back(base);
  } else {
    for (std::size_t c = 0;; ++c) {
      const fs::path stem = base.string() + "_c" + std::to_string(c);
      if (!exists(stem)) break;
      m.stems.push_back(stem);
    }
  }
  if (m.stems.empty()) {
    throw IoError("no measurements found for '" + input + "' (expected " + base.string() +
                  ".json or " + base.string() + "_c0.json)");
  }
  for (const auto& s : m.stems) m.channels.push_back(load_measurement(s));
  return m;
}

// Dense operators small enough for an SVD get one, so every pseudoinverse is
// a pair of matrix products instead of a CG solve.
LinearOperator with_fast_pinv(const LinearOperator& op) {
  if (op.matrix() && op.in_dim() * op.out_dim() <= LinearOperator::kMaxDenseSvdEntries) {
    return op.with_svd();
  }
  return op;
}

LinearOperator resolve_operator(const RunConfig& cfg, std::size_t n) {
  const std::string& spec = cfg.op;
  if (spec == "fourier") throw ArgumentError("--op: a general operator is required for this task");
  if (spec.rfind("random:", 0) == 0) {
    const std::string rest = spec.substr(7);
    const auto colon = rest.find(':');
    const std::size_t m = parse_uint("op", rest.substr(0, colon));
    const std::uint64_t seed =
        colon == std::string::npos ? 0 : parse_uint("op", rest.substr(colon + 1));
    return with_fast_pinv(make_random_transmission_operator(m, n, seed));
  }
  const fs::path p = spec;
  LinearOperator op = operator_from_tensor("file:" + p.filename().string(), read_dprt(p));
  if (op.in_dim() != n) {
    throw ShapeError("operator " + spec + " acts on " + std::to_string(op.in_dim()) +
                     " pixels, image has " + std::to_string(n));
  }
  return with_fast_pinv(op);
}

std::size_t square_side(std::size_t n) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) {
    throw ShapeError("general measurements need a square image; n = " + std::to_string(n));
  }
  return side;
}

PrProblem make_problem(const RunConfig& cfg, const MeasuredImage& m, bool general_task) {
  const Geometry& g = m.channels.front().geometry;
  if (cfg.task == "hio" && g.kind == Geometry::Kind::general) general_task = true;
  if (!general_task) {
    if (g.kind != Geometry::Kind::fourier) {
      throw ArgumentError(m.name + ": task " + cfg.task +
                          " needs Fourier measurements; use ddrm-pr-general");
    }
    return fourier_problem(m.channels, cfg.nonneg);
  }
  std::vector<RVector> y;
  for (const auto& ch : m.channels) {
    if (!(ch.geometry == g)) throw ShapeError(m.name + ": channels differ in geometry");
    y.push_back(ch.y);
  }
  if (g.kind == Geometry::Kind::fourier) {
    return general_problem(std::move(y), make_fourier_operator(g.n_side, g.factor), g.n_side,
                           g.n_side);
  }
  const std::size_t side = square_side(g.n);
  LinearOperator op = resolve_operator(cfg, g.n);
  if (op.out_dim() != g.m) throw ShapeError(m.name + ": operator rows != measurement length");
  if (op.id() != m.channels.front().operator_id) {
    throw ArgumentError(m.name + ": measured with operator '" + m.channels.front().operator_id +
                        "', but --op gives '" + op.id() + "'");
  }
  return general_problem(std::move(y), std::move(op), side, side);
}

struct WrittenImage {
  fs::path raster, tensor;
};

WrittenImage write_reconstruction(const RunConfig& cfg, const std::string& stem,
                                  const RealImage& img) {
  const fs::path out = cfg.out;
  std::string ext = "." + cfg.format;
  if (cfg.format == "pgm" && img.channels() == 3) ext = ".ppm";
  if (cfg.format == "ppm" && img.channels() == 1) ext = ".pgm";
  WrittenImage w{out / (stem + ext), out / (stem + ".dprt")};
  write_image(w.raster, img);
  write_dprt(w.tensor, to_tensor(img));
  return w;
}

ordered_json settings_json(const RunConfig& cfg) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : to_settings(cfg)) {
    if (is_list_key(k)) {
      if (!j.contains(k)) j[k] = ordered_json::array();
      j[k].push_back(v);
    } else {
      j[k] = v;
    }
  }
  for (const char* k : {"input", "reference"}) {
    if (!j.contains(k)) j[k] = ordered_json::array();
  }
  return j;
}

Settings settings_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("manifest config must be an object");
  Settings s;
  for (const auto& key : setting_keys()) {
    if (!j.contains(key)) continue;
    const json& v = j.at(key);
    if (v.is_array()) {
      // An empty list still has to clear the previous layer.
      if (v.empty()) s.emplace_back(key, "");
      for (const auto& e : v) s.emplace_back(key, e.get<std::string>());
    } else {
      s.emplace_back(key, v.get<std::string>());
    }
  }
  return s;
}

ordered_json output_entry(const fs::path& p) {
  return {{"path", p.string()}, {"fnv1a64", file_hash(p)}};
}

void write_manifest(const RunConfig& cfg, ordered_json body) {
  ordered_json m;
  m["format"] = "ddrmpr-manifest/1";
  m["task"] = cfg.task;
  m["config"] = settings_json(cfg);
  for (auto& [k, v] : body.items()) m[k] = std::move(v);
  write_text_atomic(fs::path(cfg.out) / "manifest.json", m.dump(2) + "\n");
}

// Runs fn(i) for every item; parallel across items when there are several,
// otherwise the item itself gets all workers.
template <typename Fn>
void for_items(std::size_t count, std::size_t jobs, Fn&& fn) {
  if (count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i, jobs);
    return;
  }
  parallel_for(count, jobs, [&](std::size_t i) { fn(i, std::size_t{1}); });
}

// ---------------------------------------------------------------------------
// Tasks

void require_inputs(const RunConfig& cfg) {
  if (cfg.input.empty()) throw ArgumentError("task " + cfg.task + " needs at least one --input");
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out) {
  require_inputs(cfg);
  ensure_dir(cfg.out);
  std::vector<ordered_json> items(cfg.input.size());
  for_items(cfg.input.size(), resolve_jobs(cfg), [&](std::size_t i, std::size_t) {
    const fs::path in = cfg.input[i];
    const RealImage img = read_any_image(in);
    std::vector<MeasurementSet> sets;
    if (cfg.op == "fourier") {
      sets = simulate_fourier(img, cfg.factor, cfg.alpha, cfg.seed);
    } else {
      sets = simulate_channels(img, resolve_operator(cfg, img.pixels()), cfg.alpha, cfg.seed);
    }
    const std::string name = in.stem().string();
    ordered_json outputs = ordered_json::array();
    ordered_json clamped = ordered_json::array();
    for (std::size_t c = 0; c < sets.size(); ++c) {
      const fs::path stem = fs::path(cfg.out) / (name + "_c" + std::to_string(c));
      save_measurement(stem, sets[c]);
      outputs.push_back(output_entry(stem.string() + ".dprt"));
      outputs.push_back(output_entry(stem.string() + ".json"));
      clamped.push_back(sets[c].clamped_fraction);
    }
    items[i] = {{"name", name},
                {"input", output_entry(in)},
                {"height", img.height()},
                {"width", img.width()},
                {"channels", img.channels()},
                {"operator_id", sets.front().operator_id},
                {"outputs", outputs},
                {"clamped_fraction", clamped}};
  });
  write_manifest(cfg, {{"alpha", cfg.alpha}, {"seed", cfg.seed}, {"items", items}});
  out << "simulated " << cfg.input.size() << " image(s) into " << cfg.out << "\n";
  return kOk;
}

RealImage stack(const std::vector<RealImage>& planes) {
  return RealImage::from_channels(std::span<const RealImage>(planes));
}

int cmd_reconstruct(const RunConfig& cfg, std::ostream& out) {
  require_inputs(cfg);
  ensure_dir(cfg.out);
  const bool general = cfg.task == "ddrm-pr-general";
  const bool ddrm = cfg.task != "hio";
  PrPipelineConfig pcfg = pipeline_config(cfg);
  if (general) pcfg.ap.method = ApMethod::general;
  const NoiseSchedule schedule = schedule_linear_vp();
  pcfg.validate(schedule);

  std::vector<MeasuredImage> measured;
  for (const auto& in : cfg.input) measured.push_back(load_measured(in));
  std::optional<DenoiserHandle> den;
  if (ddrm) den = parse_denoiser(cfg.denoiser, DenoiserGeometry{}, schedule.T());

  std::vector<ordered_json> items(measured.size());
  for_items(measured.size(), resolve_jobs(cfg), [&](std::size_t i, std::size_t jobs) {
    const MeasuredImage& m = measured[i];
    const PrProblem p = make_problem(cfg, m, general);
    PrPipelineConfig local = pcfg;
    if (!p.constraints) local.ap.method = ApMethod::general;
    local.jobs = jobs;
    local.random_init.jobs = jobs;

    RealImage image;
    std::vector<double> init_res;
    if (ddrm) {
      const PrResult r = ddrm_pr_run(p, local, schedule, *den);
      image = r.image;
      init_res = r.init_residuals;
    } else {
      std::vector<RandomInitResult> details;
      image = stack(pr_random_init(p, local, &details));
      for (const auto& d : details) init_res.push_back(d.final_run.final_residual);
    }
    ordered_json residuals = ordered_json::array(), norms = ordered_json::array();
    double worst = 0.0;
    for (std::size_t c = 0; c < p.channels(); ++c) {
      const double r = residual(p.y[c], p.embed(image.channel(c)), p.op, local.ap.residual);
      const double yn = p.y[c].norm();
      residuals.push_back(r);
      norms.push_back(yn);
      worst = std::max(worst, yn > 0.0 ? r / yn : r);
    }
    const WrittenImage w = write_reconstruction(cfg, m.name + "_" + cfg.task, image);
    ordered_json inputs = ordered_json::array();
    for (const auto& s : m.stems) inputs.push_back(output_entry(s.string() + ".dprt"));
    items[i] = {{"name", m.name},
                {"inputs", inputs},
                {"outputs", {output_entry(w.raster), output_entry(w.tensor)}},
                {"residuals", residuals},
                {"y_norms", norms},
                {"max_relative_residual", worst},
                {"init_residuals", init_res}};
  });

  ordered_json body = {{"pipeline", pcfg.to_json()}, {"items", items}};
  if (ddrm) body["sampler"] = pr_manifest(pcfg, schedule, den->id());
  write_manifest(cfg, std::move(body));
  for (const auto& it : items) {
    out << it["name"].get<std::string>() << ": max relative residual "
        << it["max_relative_residual"].get<double>() << "\n";
  }
  return kOk;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  require_inputs(cfg);
  if (cfg.reference.size() != cfg.input.size()) {
    throw ArgumentError("evaluate: need one --reference per --input (" +
                        std::to_string(cfg.input.size()) + " inputs, " +
                        std::to_string(cfg.reference.size()) + " references)");
  }
  ensure_dir(cfg.out);
  std::vector<MetricRow> rows(cfg.input.size());
  for_items(cfg.input.size(), resolve_jobs(cfg), [&](std::size_t i, std::size_t) {
    const RealImage recon = read_any_image(cfg.input[i]);
    const RealImage ref = read_any_image(cfg.reference[i]);
    if (!recon.same_shape(ref)) {
      throw ShapeError("evaluate: " + cfg.input[i] + " and " + cfg.reference[i] +
                       " differ in shape");
    }
    MetricRow row;
    row.image_id = fs::path(cfg.reference[i]).stem().string();
    row.method = cfg.method.empty() ? "recon" : cfg.method;
    row.alpha = cfg.alpha;
    RealImage aligned = recon;
    if (cfg.align) {
      const AlignedImage a = align_ambiguities(recon, ref);
      aligned = a.image;
      row.alignment = a.alignment;
    }
    row.psnr = psnr(aligned, ref);
    const SsimParams sp;
    row.ssim = ref.height() >= sp.window && ref.width() >= sp.window
                   ? ssim(aligned, ref, sp)
                   : std::numeric_limits<double>::quiet_NaN();
    rows[i] = row;
  });
  const std::string csv = metrics_csv(rows, true);
  const fs::path csv_path = fs::path(cfg.out) / "metrics.csv";
  write_text_atomic(csv_path, csv);
  ordered_json inputs = ordered_json::array();
  for (std::size_t i = 0; i < cfg.input.size(); ++i) {
    inputs.push_back({output_entry(cfg.input[i]), output_entry(cfg.reference[i])});
  }
  write_manifest(cfg, {{"items", inputs}, {"outputs", {output_entry(csv_path)}}});
  out << csv;
  return kOk;
}

// Grid axis name -> config key.
const std::map<std::string, std::string> kAxisKeys = {
    {"eta", "eta"},       {"eta_b", "eta-b"}, {"steps", "steps"},
    {"t_init", "t-init"}, {"n_avg", "n-avg"}, {"beta", "beta"},
    {"inner_iters", "inner-iters"}};

int cmd_gridsearch(const RunConfig& cfg, std::ostream& out) {
  require_inputs(cfg);
  if (cfg.grid.empty()) throw ArgumentError("gridsearch needs --grid <file>");
  ensure_dir(cfg.out);
  const GridSpec grid = GridSpec::parse(read_text(cfg.grid));
  const NoiseSchedule schedule = schedule_linear_vp();
  const PrPipelineConfig base = pipeline_config(cfg);
  base.validate(schedule);
  const DenoiserHandle den = parse_denoiser(cfg.denoiser, DenoiserGeometry{}, schedule.T());

  std::vector<ValidationItem> items;
  for (const auto& in : cfg.input) {
    const RealImage truth = read_any_image(in);
    const auto sets = simulate_fourier(truth, cfg.factor, cfg.alpha, cfg.seed);
    items.push_back({fs::path(in).stem().string(), truth, fourier_problem(sets, cfg.nonneg)});
  }
  const GridResult result = grid_search(grid, items, base, schedule, den, resolve_jobs(cfg));
  const fs::path csv_path = fs::path(cfg.out) / "grid.csv";
  write_text_atomic(csv_path, grid_csv(grid, result));
  if (!result.any_success) throw DivergenceError("gridsearch: every grid cell failed");

  RunConfig best = cfg;
  best.task = "ddrm-pr";
  best.input.clear();
  best.grid.clear();
  Settings cell;
  for (std::size_t a = 0; a < grid.axes.size(); ++a) {
    const double v = result.cells[result.best].values[a];
    const std::string key = kAxisKeys.at(grid.axes[a].first);
    const bool integral = key != "eta" && key != "eta-b" && key != "beta";
    cell.emplace_back(key, integral ? std::to_string(std::llround(v)) : format_double(v));
  }
  apply_settings(best, cell);
  const fs::path conf_path = fs::path(cfg.out) / "best.conf";
  write_text_atomic(conf_path, format_config_text(to_settings(best)));

  const GridCell& b = result.cells[result.best];
  write_manifest(cfg, {{"cells", result.cells.size()},
                       {"best_cell", result.best},
                       {"best_values", b.values},
                       {"best_mean_psnr", b.mean_psnr},
                       {"best_config", result.best_config.to_json()},
                       {"outputs", {output_entry(csv_path), output_entry(conf_path)}}});
  out << "best cell " << result.best << " of " << result.cells.size() << ": mean PSNR "
      << b.mean_psnr << " dB; config written to " << conf_path.string() << "\n";
  return kOk;
}

int cmd_selftest(const RunConfig& cfg, std::ostream& out) {
  EquivalenceOptions eo;
  eo.seed = cfg.seed;
  const EquivalenceReport eq = run_equivalence_suite(eo);
  const MarginalStats ms = run_marginal_check(100000, derive_seed(cfg.seed, 1));
  const HioFixedPointStats hf = run_hio_fixed_point_check(5, derive_seed(cfg.seed, 2));

  std::vector<std::string> failed;
  auto line = [&](bool ok, const std::string& name, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << name << ": " << detail << "\n";
    if (!ok) failed.push_back(name);
  };
  std::ostringstream d;
  d.precision(3);
  d << std::scientific << "max_rel_err=" << eq.max_rel_err << " over " << eq.cases.size()
    << " cases (tolerance " << eo.tolerance << ")";
  line(eq.passed, "equivalence", d.str());
  d.str("");
  d << "max|mean|=" << ms.max_abs_mean << " max|var-1|=" << ms.max_abs_var_dev
    << " eps_err=" << ms.max_eps_recovery_err << " over " << ms.draws << " draws";
  line(ms.passed, "marginal_statistics", d.str());
  d.str("");
  d << "max_rel_residual=" << hf.max_rel_residual << std::fixed << std::setprecision(2)
    << " min_psnr=" << hf.min_psnr << " dB over " << hf.trials << " images";
  line(hf.passed, "hio_fixed_point", d.str());

  if (failed.empty()) {
    out << "selftest: all 3 properties passed\n";
    return kOk;
  }
  std::string names;
  for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
  out << "selftest: FAILED: " << names << "\n";
  return kSelftestFailed;
}

int dispatch(const RunConfig& cfg, std::ostream& out) {
  if (cfg.task == "simulate") return cmd_simulate(cfg, out);
  if (cfg.task == "hio" || cfg.task == "ddrm-pr" || cfg.task == "ddrm-pr-general") {
    return cmd_reconstruct(cfg, out);
  }
  if (cfg.task == "evaluate") return cmd_evaluate(cfg, out);
  if (cfg.task == "gridsearch") return cmd_gridsearch(cfg, out);
  if (cfg.task == "selftest") return cmd_selftest(cfg, out);
  if (cfg.task.empty()) throw ArgumentError("--task is required");
  throw ArgumentError("unknown task '" + cfg.task + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Settings

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = {
      "task",   "input",    "reference",   "out",       "alpha",       "factor",
      "eta",    "eta-b",    "steps",       "t-init",    "n-avg",       "seed",
      "denoiser", "jobs",   "beta",        "inner-iters", "num-inits", "short-iters",
      "final-iters", "mixing", "nonneg",   "op",        "grid",        "method",
      "align",  "format"};
  return keys;
}

void apply_settings(RunConfig& cfg, const Settings& layer) {
  std::map<std::string, bool> cleared;
  for (const auto& [key, raw] : layer) {
    const std::string v = trim(raw);
    if (is_list_key(key)) {
      auto& list = key == "input" ? cfg.input : cfg.reference;
      if (!cleared[key]) {
        list.clear();
        cleared[key] = true;
      }
      if (!v.empty()) list.push_back(v);
      continue;
    }
    if (key == "task") {
      if (std::find(std::begin(kTasks), std::end(kTasks), v) == std::end(kTasks)) {
        throw ArgumentError("unknown task '" + v + "'");
      }
      cfg.task = v;
    } else if (key == "out") {
      cfg.out = v;
    } else if (key == "alpha") {
      cfg.alpha = parse_double(key, v);
    } else if (key == "factor") {
      cfg.factor = parse_uint(key, v);
    } else if (key == "eta") {
      cfg.eta = parse_double(key, v);
    } else if (key == "eta-b") {
      cfg.eta_b = parse_double(key, v);
    } else if (key == "steps") {
      cfg.steps = parse_uint(key, v);
    } else if (key == "t-init") {
      cfg.t_init = parse_uint(key, v);
    } else if (key == "n-avg") {
      cfg.n_avg = parse_uint(key, v);
    } else if (key == "seed") {
      cfg.seed = parse_uint(key, v);
    } else if (key == "denoiser") {
      cfg.denoiser = v;
    } else if (key == "jobs") {
      cfg.jobs = parse_uint(key, v);
    } else if (key == "beta") {
      cfg.beta = parse_double(key, v);
    } else if (key == "inner-iters") {
      cfg.inner_iters = parse_uint(key, v);
    } else if (key == "num-inits") {
      cfg.num_inits = parse_uint(key, v);
    } else if (key == "short-iters") {
      cfg.short_iters = parse_uint(key, v);
    } else if (key == "final-iters") {
      cfg.final_iters = parse_uint(key, v);
    } else if (key == "mixing") {
      if (v != "linear" && v != "exact") throw ArgumentError("--mixing: linear or exact");
      cfg.mixing = v;
    } else if (key == "nonneg") {
      cfg.nonneg = parse_bool(key, v);
    } else if (key == "op") {
      cfg.op = v;
    } else if (key == "grid") {
      cfg.grid = v;
    } else if (key == "method") {
      cfg.method = v;
    } else if (key == "align") {
      cfg.align = parse_bool(key, v);
    } else if (key == "format") {
      if (v != "png" && v != "pgm" && v != "ppm") throw ArgumentError("--format: png, pgm or ppm");
      cfg.format = v;
    } else {
      throw ArgumentError("unknown setting '" + key + "'");
    }
  }
}

Settings to_settings(const RunConfig& cfg) {
  Settings s;
  const auto u = [](std::uint64_t v) { return std::to_string(v); };
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  s.emplace_back("task", cfg.task);
  for (const auto& i : cfg.input) s.emplace_back("input", i);
  for (const auto& r : cfg.reference) s.emplace_back("reference", r);
  s.emplace_back("out", cfg.out);
  s.emplace_back("alpha", format_double(cfg.alpha));
  s.emplace_back("factor", u(cfg.factor));
  s.emplace_back("eta", format_double(cfg.eta));
  s.emplace_back("eta-b", format_double(cfg.eta_b));
  s.emplace_back("steps", u(cfg.steps));
  s.emplace_back("t-init", u(cfg.t_init));
  s.emplace_back("n-avg", u(cfg.n_avg));
  s.emplace_back("seed", u(cfg.seed));
  s.emplace_back("denoiser", cfg.denoiser);
  s.emplace_back("jobs", u(cfg.jobs));
  s.emplace_back("beta", format_double(cfg.beta));
  s.emplace_back("inner-iters", u(cfg.inner_iters));
  s.emplace_back("num-inits", u(cfg.num_inits));
  s.emplace_back("short-iters", u(cfg.short_iters));
  s.emplace_back("final-iters", u(cfg.final_iters));
  s.emplace_back("mixing", cfg.mixing);
  s.emplace_back("nonneg", b(cfg.nonneg));
  s.emplace_back("op", cfg.op);
  s.emplace_back("grid", cfg.grid);
  s.emplace_back("method", cfg.method);
  s.emplace_back("align", b(cfg.align));
  s.emplace_back("format", cfg.format);
  return s;
}

Settings parse_config_text(const std::string& text) {
  Settings s;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (std::find(setting_keys().begin(), setting_keys().end(), key) == setting_keys().end()) {
      throw ArgumentError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    s.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return s;
}

std::string format_config_text(const Settings& settings) {
  std::string text;
  for (const auto& [k, v] : settings) text += k + " = " + v + "\n";
  return text;
}

PrPipelineConfig pipeline_config(const RunConfig& cfg) {
  PrPipelineConfig p;
  p.sampler.eta = cfg.eta;
  p.sampler.eta_b = cfg.eta_b;
  p.sampler.steps = cfg.steps;
  p.sampler.t_init = cfg.t_init;
  p.sampler.n_avg = cfg.n_avg;
  p.sampler.seed = cfg.seed;
  p.sampler.mixing = cfg.mixing == "exact" ? NoiseMixing::exact : NoiseMixing::linear;
  p.hio_inner_iters = cfg.inner_iters;
  p.random_init.num_inits = cfg.num_inits;
  p.random_init.short_iters = cfg.short_iters;
  p.random_init.final_iters = cfg.final_iters;
  p.random_init.seed = cfg.seed;
  p.ap.beta = cfg.beta;
  p.nonneg = cfg.nonneg;
  p.jobs = cfg.jobs ? cfg.jobs : default_jobs();
  p.random_init.jobs = p.jobs;
  return p;
}

// ---------------------------------------------------------------------------
// Entry point

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Phase retrieval with alternating projections and diffusion priors", "ddrmpr"};
  std::map<std::string, std::string> scalar;
  std::map<std::string, std::vector<std::string>> lists;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  for (const auto& key : setting_keys()) {
    CLI::Option* o = is_list_key(key) ? app.add_option("--" + key, lists[key])
                                      : app.add_option("--" + key, scalar[key]);
    options.emplace_back(key, o);
  }
  std::string config_file, manifest_file;
  app.add_option("--config", config_file, "Flat key = value file; flags override it");
  app.add_option("--manifest", manifest_file, "Re-run the configuration recorded in a manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    RunConfig cfg;
    if (const char* env = std::getenv("DDRMPR_DENOISER"); env && *env) cfg.denoiser = env;
    if (!manifest_file.empty()) {
      const json m = guarded_io("manifest " + manifest_file,
                                [&] { return json::parse(read_text(manifest_file)); });
      apply_settings(cfg, guarded_io("manifest " + manifest_file,
                                     [&] { return settings_from_json(m.at("config")); }));
    }
    if (!config_file.empty()) apply_settings(cfg, parse_config_text(read_text(config_file)));
    Settings cli_layer;
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      if (is_list_key(key)) {
        for (const auto& v : lists[key]) cli_layer.emplace_back(key, v);
      } else {
        cli_layer.emplace_back(key, scalar[key]);
      }
    }
    apply_settings(cfg, cli_layer);
    return dispatch(cfg, out);
  } catch (const TransportError& e) {
    err << "error: denoiser transport: " << e.what() << "\n";
    return kDenoiserError;
  } catch (const ProtocolError& e) {
    err << "error: denoiser protocol: " << e.what() << "\n";
    return kDenoiserError;
  } catch (const DivergenceError& e) {
    err << "error: numerical divergence: " << e.what() << "\n";
    return kNumericalError;
  } catch (const ConvergenceError& e) {
    err << "error: solver did not converge: " << e.what() << "\n";
    return kNumericalError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
}

}  // namespace ddrmpr::cli
