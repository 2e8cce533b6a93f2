#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "latentaccel/harness.hpp"

namespace latentaccel {

/// Quick invariant suite behind `latentaccel selftest`. Prints one line per
/// check and returns true when all pass.
inline bool run_selftest(std::ostream& os) {
  struct Check {
    std::string name;
    std::function<bool()> body;
  };
  const std::vector<Check> checks{
      {"window plan L=21 l=9 v=5",
       [] {
         const WindowPlan p = plan_windows(21, 9, 5);
         return p.spans == std::vector<Span>{{0, 9}, {4, 13}, {8, 17}, {12, 21}};
       }},
      {"blend endpoints are exact",
       [] {
         SeededRng rng(11);
         const Tensor prev = gaussian({5, 3}, rng), cur = gaussian({5, 3}, rng);
         const Tensor out = blend_overlap(prev, cur, BlendWeights::linspace(5));
         return out.slice_rows(0, 1) == prev.slice_rows(0, 1) &&
                out.slice_rows(4, 5) == cur.slice_rows(4, 5);
       }},
      {"affine trajectories extrapolate exactly",
       [] {
         PredictorConfig cfg;
         cfg.spacing = 5;
         cfg.order = 3;
         cfg.dynamics_enabled = false;
         AnchorCache cache(cfg.spacing, cfg.order);
         SigmaHistory hist;
         const auto f = [](double t) { return Tensor::vector({3.0 * t + 1.0, -2.0 * t}); };
         for (int step : {40, 35, 30, 25}) push_anchor(cache, step, LayerOutputs{{f(step)}}, hist);
         const DiffTable table = finite_differences(cache);
         for (int k = 1; k < cfg.spacing; ++k)
           if (relative_l2(predict(cache, table, hist, k, cfg).final(), f(25 - k)) > 1e-12) return false;
         return true;
       }},
      {"normalize_fuse aligns moments",
       [] {
         SeededRng rng(5);
         const Tensor img = gaussian({16, 8}, rng), p = 3.0 * gaussian({16, 8}, rng);
         const FeatureStats a = stats(normalize_fuse(img, p) - img), b = stats(img);
         return std::abs(a.mean - b.mean) < 1e-9 && std::abs(a.std - b.std) < 1e-9;
       }},
      {"eval count equals ceil(T/K)",
       [] {
         ExperimentConfig cfg;
         cfg.steps = 50;
         const MetricsReport r = run_experiment(cfg);
         return r.full_eval_count == 10 && r.predicted_step_count == 40;
       }},
      {"K=1 reproduces the oracle",
       [] {
         ExperimentConfig cfg;
         cfg.steps = 12;
         cfg.spacing = 1;
         const MetricsReport r = run_experiment(cfg);
         return r.rel_err_final == 0.0 && r.full_eval_count == 12;
       }},
      {"single window matches sample_full bitwise",
       [] {
         const ToyModel model = ToyModel::build(3, 3, 8);
         SeededRng rng(4);
         const Tensor z = gaussian(model.latent_shape(6), rng), c = gaussian({6, 4}, rng);
         SamplerConfig s;
         s.steps = 8;
         return run_long(model, z, c, plan_windows(6, 6, 2), s).trajectory ==
                sample_full(model, z, c, s).trajectory;
       }},
      {"sampling is deterministic",
       [] {
         ExperimentConfig cfg;
         cfg.steps = 20;
         cfg.frames = 12;
         cfg.window = 7;
         cfg.overlap = 3;
         const MetricsReport a = run_experiment(cfg), b = run_experiment(cfg);
         return a.per_step_error == b.per_step_error;
       }},
  };
  bool ok = true;
  for (const Check& c : checks) {
    bool passed = false;
    try {
      passed = c.body();
    } catch (const std::exception& e) {
      os << "  error: " << e.what() << '\n';
    }
    os << (passed ? "PASS " : "FAIL ") << c.name << '\n';
    ok = ok && passed;
  }
  return ok;
}

}  // namespace latentaccel
