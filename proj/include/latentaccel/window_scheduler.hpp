#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "latentaccel/core.hpp"
#include "latentaccel/flow_model.hpp"
#include "latentaccel/taylor_predictor.hpp"

namespace latentaccel {

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  std::size_t length() const noexcept { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct WindowPlan {
  std::size_t total = 0;    // L
  std::size_t window = 0;   // l
  std::size_t overlap = 0;  // v
  std::vector<Span> spans;
};

/// Windows of length l advancing by l - v; the last window is clamped to
/// end at L.
inline WindowPlan plan_windows(std::size_t total, std::size_t window, std::size_t overlap) {
  detail::require(overlap > 0, "window overlap must be positive");
  detail::require(overlap < window,
                  detail::concat("window overlap ", overlap, " must be below window length ", window));
  detail::require(window <= total,
                  detail::concat("window length ", window, " exceeds sequence length ", total));
  WindowPlan plan{total, window, overlap, {}};
  std::size_t s = 0;
  std::size_t e = window;
  while (true) {
    plan.spans.push_back({s, e});
    if (e >= total) break;
    s += window - overlap;
    e = std::min(s + window, total);
  }
  return plan;
}

/// Ramp weights 0, 1/(v-1), ..., 1 (numpy linspace(0, 1, v)).
struct BlendWeights {
  std::vector<double> w;

  static BlendWeights linspace(std::size_t count) {
    detail::require(count >= 1, "blend weights need at least one sample");
    BlendWeights b;
    b.w.resize(count);
    if (count == 1) {
      b.w[0] = 1.0;
      return b;
    }
    for (std::size_t i = 0; i < count; ++i)
      b.w[i] = static_cast<double>(i) / static_cast<double>(count - 1);
    b.w.back() = 1.0;
    return b;
  }

  std::size_t size() const noexcept { return w.size(); }
};

/// Frame j of the result is w[j] * cur_head[j] + (1 - w[j]) * prev_tail[j].
inline Tensor blend_overlap(const Tensor& prev_tail, const Tensor& cur_head,
                            const BlendWeights& weights) {
  require_same_shape(prev_tail, cur_head, "blend_overlap");
  detail::require(prev_tail.rows() == weights.size(),
                  detail::concat("blend_overlap: overlap has ", prev_tail.rows(),
                                 " frames but ", weights.size(), " weights"));
  Tensor out = prev_tail;
  const std::size_t stride = prev_tail.row_size();
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const double w = weights.w[j];
    for (std::size_t c = 0; c < stride; ++c) {
      const std::size_t i = j * stride + c;
      out[i] = w * cur_head[i] + (1.0 - w) * prev_tail[i];
    }
  }
  return out;
}

struct LongRunResult {
  std::vector<Tensor> trajectory;  // steps + 1 full-length latents
  std::vector<int> evals;          // per window
  std::vector<int> predicted;      // per window
  std::vector<AnchorCache> caches;  // per window, accelerated runs only
};

/// Denoises a length-L sequence window by window.
///
/// Every step runs in two phases: each window advances from the shared
/// state z_t, then outputs are written left to right. From the second step
/// on, each window after the first blends its first v frames with the
/// previous window's raw (pre-blend) output on the same frames.
template <class Stepper>
LongRunResult run_long_with(std::vector<Stepper>& steppers, const Tensor& z_start,
                            const Tensor& cond, const WindowPlan& plan, const SamplerConfig& cfg) {
  detail::require(z_start.rank() >= 1 && z_start.rows() == plan.total,
                  detail::concat("latent has ", z_start.rows(), " frames, plan expects ", plan.total));
  detail::require(cond.rows() == plan.total,
                  detail::concat("conditioning has ", cond.rows(), " frames, plan expects ",
                                 plan.total));
  detail::require(steppers.size() == plan.spans.size(), "one stepper per window required");
  const std::vector<double> ts = cfg.timesteps();
  const BlendWeights weights = BlendWeights::linspace(plan.overlap);

  std::vector<Tensor> cond_windows;
  for (const Span& sp : plan.spans) cond_windows.push_back(cond.slice_rows(sp.begin, sp.end));

  LongRunResult result;
  result.trajectory.reserve(ts.size());
  result.trajectory.push_back(z_start);
  std::vector<Tensor> outputs(plan.spans.size());
  for (int j = 0; j < cfg.steps; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const Tensor& z = result.trajectory.back();
    for (std::size_t w = 0; w < plan.spans.size(); ++w) {
      const Span& sp = plan.spans[w];
      outputs[w] = steppers[w].step(z.slice_rows(sp.begin, sp.end), cond_windows[w], j, ts[uj],
                                    ts[uj] - ts[uj + 1]);
    }
    Tensor next = z;
    for (std::size_t w = 0; w < plan.spans.size(); ++w) {
      const Span& sp = plan.spans[w];
      if (w == 0 || j == 0) {
        next.assign_rows(sp.begin, outputs[w]);
        continue;
      }
      const Span& prev = plan.spans[w - 1];
      const std::size_t tail_begin = prev.end - plan.overlap - prev.begin;
      Tensor window = outputs[w];
      window.assign_rows(0, blend_overlap(outputs[w - 1].slice_rows(tail_begin, tail_begin + plan.overlap),
                                          outputs[w].slice_rows(0, plan.overlap), weights));
      next.assign_rows(sp.begin, window);
    }
    result.trajectory.push_back(std::move(next));
  }
  for (const Stepper& s : steppers) {
    result.evals.push_back(s.evals());
    result.predicted.push_back(s.predicted());
  }
  return result;
}

/// Long-sequence sampling; `predictor` switches each window to its own
/// anchor cache and Taylor extrapolation.
template <LayeredModel Model>
LongRunResult run_long(const Model& model, const Tensor& z_start, const Tensor& cond,
                       const WindowPlan& plan, const SamplerConfig& sampler,
                       const std::optional<PredictorConfig>& predictor = std::nullopt) {
  sampler.validate();
  if (!predictor) {
    std::vector<FullStepper<Model>> steppers(plan.spans.size(), FullStepper<Model>(model));
    return run_long_with(steppers, z_start, cond, plan, sampler);
  }
  predictor->validate();
  std::vector<TaylorStepper<Model>> steppers;
  steppers.reserve(plan.spans.size());
  for (std::size_t w = 0; w < plan.spans.size(); ++w)
    steppers.emplace_back(model, *predictor, sampler.steps);
  LongRunResult result = run_long_with(steppers, z_start, cond, plan, sampler);
  for (const auto& s : steppers) result.caches.push_back(s.cache());
  return result;
}

}  // namespace latentaccel
