// Command-line front end: sample, ablate, plan, selftest.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "latentaccel/harness.hpp"
#include "latentaccel/selftest.hpp"

namespace {

using namespace latentaccel;

struct Overrides {
  std::optional<std::string> config;
  std::optional<int> steps, frames, window, overlap, spacing, order, repetitions;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> fusion, out;
  bool no_dynamics = false;

  void attach(CLI::App& app) {
    app.add_option("--config", config, "Flat JSON config file; flags override its values");
    app.add_option("-T,--steps", steps, "Denoising steps");
    app.add_option("-L,--frames", frames, "Sequence length in frames");
    app.add_option("--window", window, "Window length (0 = whole sequence)");
    app.add_option("--overlap", overlap, "Overlap between windows");
    app.add_option("-K", spacing, "Anchor spacing in steps (1 disables prediction)");
    app.add_option("-n", order, "Highest finite-difference order");
    app.add_option("--alpha", alpha, "Exponent of the variation scale");
    app.add_flag("--no-dynamics", no_dynamics, "Disable the variation scale and layer weights");
    app.add_option("--fusion", fusion, "none | ours | pure-norm | centralization | baseline-add");
    app.add_option("--seed", seed, "Base seed");
    app.add_option("--reps", repetitions, "Repetitions with consecutive seeds");
    app.add_option("--out", out, "Output path");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = config ? load_config(*config) : ExperimentConfig{};
    if (steps) cfg.steps = *steps;
    if (frames) cfg.frames = *frames;
    if (window) cfg.window = *window;
    if (overlap) cfg.overlap = *overlap;
    if (spacing) cfg.spacing = *spacing;
    if (order) cfg.order = *order;
    if (alpha) cfg.alpha = *alpha;
    if (seed) cfg.seed = *seed;
    if (repetitions) cfg.repetitions = *repetitions;
    if (no_dynamics) cfg.dynamics = false;
    if (fusion) {
      if (*fusion == "none") cfg.fusion.reset();
      else cfg.fusion = parse_fusion_mode(*fusion);
    }
    if (out) cfg.out = *out;
    cfg.validate();
    return cfg;
  }
};

std::vector<std::optional<FusionMode>> parse_fusions(const std::vector<std::string>& names) {
  std::vector<std::optional<FusionMode>> out;
  for (const std::string& n : names)
    out.push_back(n == "none" ? std::nullopt : std::optional<FusionMode>(parse_fusion_mode(n)));
  return out;
}

int cmd_sample(const Overrides& o, bool no_timing) {
  const ExperimentConfig cfg = o.resolve();
  const MetricsReport report = run_experiment(cfg);
  write_csv(std::cout, {report}, !no_timing);
  if (!cfg.out.empty()) {
    // Dump the accelerated trajectory of the first repetition with its caches.
    const ExperimentRun run = run_pair(cfg, 0);
    dump_trajectory(run.accelerated.trajectory, cfg.out, run.accelerated.caches);
  }
  return 0;
}

int cmd_ablate(const Overrides& o, const std::vector<int>& ks, const std::vector<int>& ns,
               const std::vector<std::string>& dynamics, const std::vector<std::string>& fusions,
               int jobs, bool no_timing) {
  const ExperimentConfig cfg = o.resolve();
  AblationGrid grid;
  grid.spacings = ks.empty() ? std::vector<int>{cfg.spacing} : ks;
  grid.orders = ns.empty() ? std::vector<int>{cfg.order} : ns;
  if (dynamics.empty()) {
    grid.dynamics = {cfg.dynamics};
  } else {
    grid.dynamics.clear();
    for (const std::string& d : dynamics) grid.dynamics.push_back(d == "on");
  }
  grid.fusions = fusions.empty() ? std::vector<std::optional<FusionMode>>{cfg.fusion}
                                 : parse_fusions(fusions);
  const std::vector<MetricsReport> reports = ablation_sweep(cfg, grid, jobs);
  if (cfg.out.empty()) {
    write_csv(std::cout, reports, !no_timing);
    return 0;
  }
  std::ofstream file(cfg.out);
  if (!file) throw IoError("cannot open " + cfg.out + " for writing");
  write_csv(file, reports, !no_timing);
  return 0;
}

int cmd_plan(int frames, int window, int overlap) {
  if (frames <= 0 || window <= 0 || overlap <= 0)
    throw InvalidArgument("frames, window and overlap must be positive");
  const WindowPlan plan = plan_windows(static_cast<std::size_t>(frames),
                                       static_cast<std::size_t>(window),
                                       static_cast<std::size_t>(overlap));
  std::cout << "index,start,end\n";
  for (std::size_t i = 0; i < plan.spans.size(); ++i)
    std::cout << i << ',' << plan.spans[i].begin << ',' << plan.spans[i].end << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Taylor-extrapolation sampler acceleration on a toy flow-matching denoiser"};
  app.require_subcommand(1);

  Overrides sample_opts;
  bool sample_no_timing = false;
  CLI::App* sample = app.add_subcommand("sample", "Run oracle and accelerated sampling, print one CSV row");
  sample_opts.attach(*sample);
  sample->add_flag("--no-timing", sample_no_timing, "Report wall_ms as 0 for reproducible output");

  Overrides ablate_opts;
  std::vector<int> grid_k, grid_n;
  std::vector<std::string> grid_dynamics, grid_fusion;
  int jobs = 1;
  bool ablate_no_timing = false;
  CLI::App* ablate = app.add_subcommand("ablate", "Sweep a grid of K, n, dynamics and fusion modes");
  ablate_opts.attach(*ablate);
  ablate->add_option("--grid-K", grid_k, "Anchor spacings")->delimiter(',');
  ablate->add_option("--grid-n", grid_n, "Difference orders")->delimiter(',');
  ablate->add_option("--grid-dynamics", grid_dynamics, "on/off")
      ->delimiter(',')
      ->check(CLI::IsMember({"on", "off"}));
  ablate->add_option("--grid-fusion", grid_fusion, "Fusion modes")->delimiter(',');
  ablate->add_option("--jobs", jobs, "Parallel grid cells")->check(CLI::PositiveNumber);
  ablate->add_flag("--no-timing", ablate_no_timing, "Report wall_ms as 0 for reproducible output");

  int plan_frames = 21, plan_window = 9, plan_overlap = 5;
  CLI::App* plan = app.add_subcommand("plan", "Print the sliding-window plan");
  plan->add_option("-L,--frames", plan_frames, "Sequence length");
  plan->add_option("--window", plan_window, "Window length");
  plan->add_option("--overlap", plan_overlap, "Overlap length");

  CLI::App* selftest = app.add_subcommand("selftest", "Run the built-in invariant checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sample->parsed()) return cmd_sample(sample_opts, sample_no_timing);
    if (ablate->parsed())
      return cmd_ablate(ablate_opts, grid_k, grid_n, grid_dynamics, grid_fusion, jobs,
                        ablate_no_timing);
    if (plan->parsed()) return cmd_plan(plan_frames, plan_window, plan_overlap);
    if (selftest->parsed()) return run_selftest(std::cout) ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
