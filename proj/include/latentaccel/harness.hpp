#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "latentaccel/core.hpp"
#include "latentaccel/flow_model.hpp"
#include "latentaccel/norm_fusion.hpp"
#include "latentaccel/taylor_predictor.hpp"
#include "latentaccel/window_scheduler.hpp"

namespace latentaccel {

/// Invalid experiment configuration; the message starts with the field name.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error("config field '" + field + "': " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File contents are not a valid trajectory document.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trajectory document carries a version this build does not read.
class UnsupportedVersion : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kTrajectoryVersion = 1;

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int layers = 4;
  int width = 32;
  int channels = 8;
  int cond_width = 4;
  int steps = 50;
  int frames = 8;    // L
  int window = 0;    // l; 0 means the whole sequence
  int overlap = 5;   // v
  int spacing = 5;   // K
  int order = 3;     // n
  double alpha = 1.5;
  bool dynamics = true;
  std::optional<FusionMode> fusion;  // none unless set
  int repetitions = 1;
  std::string out;

  int window_length() const { return window == 0 ? frames : window; }

  SamplerConfig sampler() const {
    SamplerConfig s;
    s.steps = steps;
    s.seed = seed;
    return s;
  }

  PredictorConfig predictor() const {
    PredictorConfig p;
    p.spacing = spacing;
    p.order = order;
    p.alpha = alpha;
    p.dynamics_enabled = dynamics;
    return p;
  }

  /// "oracle" when K = 1, otherwise taylor or taylor-static, suffixed with
  /// the fusion mode when one is attached.
  std::string mode_label() const {
    std::string label = spacing == 1 ? "oracle" : dynamics ? "taylor" : "taylor-static";
    if (fusion) label += "+" + std::string(to_string(*fusion));
    return label;
  }

  void validate() const {
    const auto check = [](bool ok, const char* field, const std::string& what) {
      if (!ok) throw ConfigError(field, what);
    };
    check(layers >= 2, "layers", "must be >= 2");
    check(width >= 2, "width", "must be >= 2");
    check(channels >= 1, "channels", "must be >= 1");
    check(cond_width >= 1, "cond_width", "must be >= 1");
    check(steps >= 1, "steps", "must be >= 1");
    check(frames >= 1, "frames", "must be >= 1");
    check(window >= 0 && window <= frames, "window", "must lie in [0, frames]");
    check(spacing >= 1, "K", "must be >= 1");
    check(order >= 0, "n", "must be >= 0");
    check(alpha >= 0.5 && alpha <= 1.5, "alpha", "must lie in [0.5, 1.5]");
    check(repetitions >= 1, "repetitions", "must be >= 1");
    if (window_length() < frames) {
      check(overlap >= 1, "overlap", "must be >= 1");
      check(overlap < window_length(), "overlap", "must be below the window length");
    }
  }

  /// Window plan; a single window over everything when l == L.
  WindowPlan plan() const {
    const auto l = static_cast<std::size_t>(window_length());
    const auto total = static_cast<std::size_t>(frames);
    if (l == total)
      return WindowPlan{total, l, std::clamp<std::size_t>(static_cast<std::size_t>(overlap), 1, l),
                        {{0, total}}};
    return plan_windows(total, l, static_cast<std::size_t>(overlap));
  }
};

/// Applies the keys of a flat JSON object; unknown keys are rejected.
inline void apply_json(ExperimentConfig& cfg, const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("<root>", "config document must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    try {
      if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "layers") cfg.layers = value.get<int>();
      else if (key == "width") cfg.width = value.get<int>();
      else if (key == "channels") cfg.channels = value.get<int>();
      else if (key == "cond_width") cfg.cond_width = value.get<int>();
      else if (key == "steps") cfg.steps = value.get<int>();
      else if (key == "frames") cfg.frames = value.get<int>();
      else if (key == "window") cfg.window = value.get<int>();
      else if (key == "overlap") cfg.overlap = value.get<int>();
      else if (key == "K") cfg.spacing = value.get<int>();
      else if (key == "n") cfg.order = value.get<int>();
      else if (key == "alpha") cfg.alpha = value.get<double>();
      else if (key == "dynamics") cfg.dynamics = value.get<bool>();
      else if (key == "fusion") {
        const auto name = value.get<std::string>();
        if (name == "none") cfg.fusion.reset();
        else cfg.fusion = parse_fusion_mode(name);
      } else if (key == "repetitions") cfg.repetitions = value.get<int>();
      else if (key == "out") cfg.out = value.get<std::string>();
      else throw ConfigError(key, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(key, e.what());
    } catch (const InvalidArgument& e) {
      throw ConfigError(key, e.what());
    }
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  apply_json(cfg, doc);
  return cfg;
}

struct MetricsReport {
  std::string mode;
  ExperimentConfig config;
  int full_eval_count = 0;       // per window
  int predicted_step_count = 0;  // per window
  double wall_clock_ms = 0.0;    // accelerated runs only, summed over repetitions
  double rel_err_final = 0.0;    // mean over repetitions
  double rel_err_mean = 0.0;     // mean over steps and repetitions
  std::vector<double> per_step_error;  // steps + 1 entries, mean over repetitions

  double speedup_proxy() const {
    return static_cast<double>(config.steps) / static_cast<double>(full_eval_count);
  }
};

/// Inputs of one repetition: model, initial noise and conditioning.
struct ExperimentInputs {
  ToyModel model;
  Tensor noise;
  Tensor cond;
};

inline ExperimentInputs make_inputs(const ExperimentConfig& cfg, int repetition) {
  const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(repetition);
  ToyModel::Dims dims;
  dims.layers = static_cast<std::size_t>(cfg.layers);
  dims.width = static_cast<std::size_t>(cfg.width);
  dims.channels = static_cast<std::size_t>(cfg.channels);
  dims.cond_width = static_cast<std::size_t>(cfg.cond_width);
  ToyModel model = ToyModel::build(seed, dims);
  if (cfg.fusion)
    model = model.with_fusion(
        FusionBlock::build(seed ^ 0xF00DULL, static_cast<std::size_t>(cfg.width), *cfg.fusion));
  SeededRng rng(seed ^ 0x9E3779B97F4A7C15ULL);
  const auto frames = static_cast<std::size_t>(cfg.frames);
  Tensor noise = gaussian(model.latent_shape(frames), rng);
  Tensor cond = gaussian({frames, dims.cond_width}, rng);
  return {std::move(model), std::move(noise), std::move(cond)};
}

/// Accelerated run of one repetition, kept for trajectory dumps.
struct ExperimentRun {
  LongRunResult oracle;
  LongRunResult accelerated;
};

inline ExperimentRun run_pair(const ExperimentConfig& cfg, int repetition, double* wall_ms = nullptr) {
  const ExperimentInputs in = make_inputs(cfg, repetition);
  const WindowPlan plan = cfg.plan();
  ExperimentRun run;
  run.oracle = run_long(in.model, in.noise, in.cond, plan, cfg.sampler());
  const auto start = std::chrono::steady_clock::now();
  run.accelerated = run_long(in.model, in.noise, in.cond, plan, cfg.sampler(), cfg.predictor());
  if (wall_ms)
    *wall_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                    .count();
  return run;
}

/// Oracle vs accelerated pipeline on identical inputs for every repetition.
inline MetricsReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  MetricsReport report;
  report.mode = cfg.mode_label();
  report.config = cfg;
  report.per_step_error.assign(static_cast<std::size_t>(cfg.steps) + 1, 0.0);
  for (int r = 0; r < cfg.repetitions; ++r) {
    const ExperimentRun run = run_pair(cfg, r, &report.wall_clock_ms);
    const auto& evals = run.accelerated.evals;
    const auto& predicted = run.accelerated.predicted;
    if (std::adjacent_find(evals.begin(), evals.end(), std::not_equal_to<>{}) != evals.end())
      throw std::logic_error("windows disagree on evaluation count");
    report.full_eval_count = evals.front();
    report.predicted_step_count = predicted.front();
    for (std::size_t j = 0; j < report.per_step_error.size(); ++j)
      report.per_step_error[j] +=
          relative_l2(run.accelerated.trajectory[j], run.oracle.trajectory[j]);
  }
  const double reps = cfg.repetitions;
  for (double& e : report.per_step_error) e /= reps;
  report.rel_err_final = report.per_step_error.back();
  double sum = 0.0;
  for (std::size_t j = 1; j < report.per_step_error.size(); ++j) sum += report.per_step_error[j];
  report.rel_err_mean = sum / static_cast<double>(cfg.steps);
  return report;
}

struct AblationGrid {
  std::vector<int> spacings{5};
  std::vector<int> orders{3};
  std::vector<bool> dynamics{true};
  std::vector<std::optional<FusionMode>> fusions{std::nullopt};

  std::size_t size() const {
    return spacings.size() * orders.size() * dynamics.size() * fusions.size();
  }
};

inline bool report_order(const MetricsReport& a, const MetricsReport& b) {
  return std::tie(a.mode, a.config.spacing, a.config.order) <
         std::tie(b.mode, b.config.spacing, b.config.order);
}

/// One report per grid cell, sorted by (mode, K, n). Cells run on up to
/// `jobs` threads; each cell is deterministic on its own.
inline std::vector<MetricsReport> ablation_sweep(const ExperimentConfig& base,
                                                 const AblationGrid& grid, int jobs = 1) {
  if (grid.size() == 0) throw InvalidArgument("ablation grid is empty");
  std::vector<ExperimentConfig> cells;
  for (std::optional<FusionMode> fusion : grid.fusions)
    for (bool dyn : grid.dynamics)
      for (int k : grid.spacings)
        for (int n : grid.orders) {
          ExperimentConfig c = base;
          c.spacing = k;
          c.order = n;
          c.dynamics = dyn;
          c.fusion = fusion;
          cells.push_back(c);
        }

  std::vector<MetricsReport> reports(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        reports[i] = run_experiment(cells[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::clamp<int>(jobs, 1, static_cast<int>(cells.size())));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!errors[i]) continue;
    const ExperimentConfig& c = cells[i];
    std::string cell = detail::concat("cell ", i, " (mode=", c.mode_label(), ", K=", c.spacing,
                                      ", n=", c.order, ")");
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw std::runtime_error(cell + ": " + e.what());
    }
  }
  std::stable_sort(reports.begin(), reports.end(), report_order);
  return reports;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCsvHeader =
    "mode,K,n,alpha,T,L,l,v,evals,predicted,wall_ms,rel_err_final,rel_err_mean";

inline std::string csv_row(const MetricsReport& r, bool include_timing = true) {
  const ExperimentConfig& c = r.config;
  std::ostringstream os;
  os << r.mode << ',' << c.spacing << ',' << c.order << ',' << std::setprecision(17) << c.alpha
     << ',' << c.steps << ',' << c.frames << ',' << c.window_length() << ',' << c.overlap << ','
     << r.full_eval_count << ',' << r.predicted_step_count << ',' << std::fixed
     << std::setprecision(3) << (include_timing ? r.wall_clock_ms : 0.0) << ','
     << std::defaultfloat << std::setprecision(17) << r.rel_err_final << ',' << r.rel_err_mean;
  return os.str();
}

inline void write_csv(std::ostream& os, const std::vector<MetricsReport>& reports,
                      bool include_timing = true) {
  os << kCsvHeader << '\n';
  for (const MetricsReport& r : reports) os << csv_row(r, include_timing) << '\n';
}

// ---------------------------------------------------------------------------
// Trajectory documents
//
// {"version": 1, "format": "latentaccel.trajectory",
//  "steps": [{"shape": [..], "data": [..]}, ...], "caches": [...optional]}
//
// Doubles are written in shortest round-trip form, so a load reproduces
// every bit of the dumped values.

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.data()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  try {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed tensor entry: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw SchemaError(std::string("inconsistent tensor entry: ") + e.what());
  }
}

/// Debug view of an anchor cache: anchor steps and per-layer outputs.
inline nlohmann::json cache_to_json(const AnchorCache& cache) {
  nlohmann::json anchors = nlohmann::json::array();
  for (std::size_t i = 0; i < cache.size(); ++i) {
    nlohmann::json layers = nlohmann::json::array();
    for (const Tensor& t : cache[i].outputs.per_layer) layers.push_back(tensor_to_json(t));
    anchors.push_back({{"step", cache[i].step}, {"layers", std::move(layers)}});
  }
  return {{"K", cache.spacing()}, {"capacity", cache.capacity()}, {"anchors", std::move(anchors)}};
}

inline nlohmann::json trajectory_to_json(const std::vector<Tensor>& traj) {
  nlohmann::json steps = nlohmann::json::array();
  for (const Tensor& t : traj) steps.push_back(tensor_to_json(t));
  return {{"version", kTrajectoryVersion}, {"format", "latentaccel.trajectory"},
          {"steps", std::move(steps)}};
}

inline void dump_trajectory(const std::vector<Tensor>& traj, const std::string& path,
                            const std::vector<AnchorCache>& caches = {}) {
  nlohmann::json doc = trajectory_to_json(traj);
  if (!caches.empty()) {
    doc["caches"] = nlohmann::json::array();
    for (const AnchorCache& c : caches) doc["caches"].push_back(cache_to_json(c));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << doc.dump() << '\n';
  if (!out) throw IoError("write to " + path + " failed");
}

inline std::vector<Tensor> trajectory_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("version"))
    throw SchemaError("trajectory document has no version field");
  if (!doc["version"].is_number_integer() || doc["version"].get<int>() != kTrajectoryVersion)
    throw UnsupportedVersion("unsupported version " + doc["version"].dump() + " (expected " +
                             std::to_string(kTrajectoryVersion) + ")");
  if (!doc.contains("steps") || !doc["steps"].is_array())
    throw SchemaError("trajectory document has no steps array");
  std::vector<Tensor> traj;
  for (const auto& step : doc["steps"]) traj.push_back(tensor_from_json(step));
  return traj;
}

inline std::vector<Tensor> load_trajectory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("trajectory file is not valid JSON: ") + e.what());
  }
  return trajectory_from_json(doc);
}

}  // namespace latentaccel
