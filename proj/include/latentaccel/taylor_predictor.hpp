#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "latentaccel/core.hpp"
#include "latentaccel/flow_model.hpp"
#include "latentaccel/ring_buffer.hpp"

namespace latentaccel {

struct PredictorConfig {
  int spacing = 5;  // K: denoising steps between anchors
  int order = 3;    // n: highest finite-difference order
  double alpha = 1.5;
  bool dynamics_enabled = true;

  void validate() const {
    detail::require(spacing >= 1, "predictor spacing K must be >= 1");
    detail::require(order >= 0, "predictor order n must be >= 0");
    detail::require(alpha >= 0.5 && alpha <= 1.5, "predictor alpha must lie in [0.5, 1.5]");
  }
};

/// Variation of the final-layer output between consecutive anchors and
/// its running mean.
class SigmaHistory {
 public:
  void record(double sigma) {
    sigmas_.push_back(sigma);
    sum_ += sigma;
  }
  bool empty() const noexcept { return sigmas_.empty(); }
  std::size_t size() const noexcept { return sigmas_.size(); }
  double newest() const { return sigmas_.back(); }
  double average() const { return sum_ / static_cast<double>(sigmas_.size()); }
  const std::vector<double>& values() const noexcept { return sigmas_; }

 private:
  std::vector<double> sigmas_;
  double sum_ = 0.0;
};

struct AnchorEntry {
  int step = 0;  // timestep counter, decreasing as denoising proceeds
  LayerOutputs outputs;
};

/// The last n + 1 fully evaluated anchors, spaced exactly K timesteps apart.
class AnchorCache {
 public:
  AnchorCache(int spacing, int order)
      : spacing_(spacing), entries_(static_cast<std::size_t>(order) + 1) {
    detail::require(spacing >= 1 && order >= 0, "anchor cache needs K >= 1 and n >= 0");
  }

  int spacing() const noexcept { return spacing_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t capacity() const noexcept { return entries_.capacity(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// i = 0 is the newest anchor.
  const AnchorEntry& from_newest(std::size_t i) const { return entries_.from_newest(i); }
  const AnchorEntry& newest() const { return entries_.newest(); }
  /// Chronological access, 0 = oldest.
  const AnchorEntry& operator[](std::size_t i) const { return entries_[i]; }

 private:
  friend void push_anchor(AnchorCache&, int, LayerOutputs, SigmaHistory&);
  int spacing_;
  RingBuffer<AnchorEntry> entries_;
};

/// Appends an anchor, evicting the oldest past capacity, and records
/// sigma = ||f(t+K) - f(t)|| / K on the final layer once two anchors exist.
inline void push_anchor(AnchorCache& cache, int step, LayerOutputs outputs, SigmaHistory& hist) {
  detail::require(outputs.layer_count() > 0, "anchor outputs must have at least one layer");
  if (!cache.empty()) {
    const AnchorEntry& prev = cache.newest();
    if (prev.step - step != cache.spacing())
      throw InvalidArgument(detail::concat("anchor spacing violated: previous anchor ", prev.step,
                                           ", new anchor ", step, ", K = ", cache.spacing()));
    detail::require(prev.outputs.layer_count() == outputs.layer_count(),
                    "anchor layer count changed");
    hist.record(l2_norm(prev.outputs.final() - outputs.final()) / cache.spacing());
  }
  cache.entries_.push_back(AnchorEntry{step, std::move(outputs)});
}

/// Forward differences at the newest anchor, per layer: orders[l][i] = Δⁱf.
struct DiffTable {
  std::vector<std::vector<Tensor>> orders;

  std::size_t layer_count() const noexcept { return orders.size(); }
  int max_order() const { return orders.empty() ? -1 : static_cast<int>(orders.front().size()) - 1; }
  const Tensor& at(std::size_t layer, int order) const {
    return orders[layer][static_cast<std::size_t>(order)];
  }
};

/// Δf(t) = f(t+K) - f(t), iterated, with t the newest anchor. The highest
/// order available is cache.size() - 1.
inline DiffTable finite_differences(const AnchorCache& cache) {
  detail::require(!cache.empty(), "finite_differences needs at least one anchor");
  const std::size_t count = cache.size();
  const std::size_t layers = cache.newest().outputs.layer_count();
  DiffTable table;
  table.orders.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    // row[j] holds Δⁱf at the j-th newest anchor.
    std::vector<Tensor> row;
    row.reserve(count);
    for (std::size_t j = 0; j < count; ++j) row.push_back(cache.from_newest(j).outputs.per_layer[l]);
    table.orders[l].push_back(row.front());
    for (std::size_t i = 1; i < count; ++i) {
      for (std::size_t j = 0; j + i < count; ++j) row[j] = row[j + 1] - row[j];
      table.orders[l].push_back(row.front());
    }
  }
  return table;
}

struct ScaleFactor {
  double value = 1.0;
  bool warmup = false;  // true when no sigma was recorded yet
};

/// s = (sigma_newest / sigma_avg)^alpha.
inline ScaleFactor scale_s(const SigmaHistory& hist, double alpha) {
  if (hist.empty()) return {1.0, true};
  return {std::pow(hist.newest() / std::max(hist.average(), kEpsilon), alpha), false};
}

/// w = 1 / sqrt(r), r = E|Δⁱf(l)| / mean over layers of E|Δⁱf|, where E is
/// the mean over tensor elements. A vanishing cross-layer mean gives r = 1.
inline double layer_weight(const DiffTable& table, std::size_t layer, int order) {
  detail::require(order >= 0 && order <= table.max_order(),
                  detail::concat("difference order ", order, " not present (max ",
                                 table.max_order(), ")"));
  detail::require(layer < table.layer_count(), "layer index out of range");
  double total = 0.0;
  for (std::size_t l = 0; l < table.layer_count(); ++l) total += mean_abs(table.at(l, order));
  const double avg = total / static_cast<double>(table.layer_count());
  const double r = avg < kEpsilon ? 1.0 : mean_abs(table.at(layer, order)) / avg;
  return 1.0 / std::sqrt(std::max(r, kEpsilon));
}

/// Per-layer, per-order correction factors w(l, i) and the shared scale s.
struct DynamicFactors {
  std::vector<std::vector<double>> weights;  // [layer][order], order 0 unused
  double scale = 1.0;

  static DynamicFactors neutral(std::size_t layers, int max_order) {
    return {std::vector<std::vector<double>>(
                layers, std::vector<double>(static_cast<std::size_t>(max_order) + 1, 1.0)),
            1.0};
  }
};

/// Effective prediction order: min(n, anchors - 1).
inline int effective_order(const AnchorCache& cache, const PredictorConfig& cfg) {
  return std::min(cfg.order, static_cast<int>(cache.size()) - 1);
}

/// True while the cache holds fewer than n + 1 anchors.
inline bool in_warmup(const AnchorCache& cache, const PredictorConfig& cfg) {
  return static_cast<int>(cache.size()) < cfg.order + 1;
}

/// Factors used by predict: neutral when dynamics are off or during warmup.
inline DynamicFactors dynamic_factors(const AnchorCache& cache, const DiffTable& table,
                                      const SigmaHistory& hist, const PredictorConfig& cfg) {
  const int m = effective_order(cache, cfg);
  DynamicFactors f = DynamicFactors::neutral(table.layer_count(), m);
  if (!cfg.dynamics_enabled || in_warmup(cache, cfg)) return f;
  f.scale = scale_s(hist, cfg.alpha).value;
  for (std::size_t l = 0; l < table.layer_count(); ++l)
    for (int i = 1; i <= m; ++i) f.weights[l][static_cast<std::size_t>(i)] = layer_weight(table, l, i);
  return f;
}

/// f(a - k, l) = Δ⁰f(a, l) + Σ_{i=1..m} Δⁱf(a, l) (-k)ⁱ / (i! Kⁱ w(l, i) s),
/// with m = factors.weights[l].size() - 1.
inline LayerOutputs predict_with(const DiffTable& table, int k, int spacing,
                                 const DynamicFactors& factors) {
  detail::require(k >= 1 && k <= spacing - 1,
                  detail::concat("prediction offset k = ", k, " outside [1, ", spacing - 1, "]"));
  LayerOutputs out;
  out.per_layer.reserve(table.layer_count());
  for (std::size_t l = 0; l < table.layer_count(); ++l) {
    Tensor acc = table.at(l, 0);
    const int m = static_cast<int>(factors.weights[l].size()) - 1;
    double numerator = 1.0;  // (-k)^i
    double denominator = 1.0;  // i! K^i
    for (int i = 1; i <= m; ++i) {
      numerator *= -static_cast<double>(k);
      denominator *= static_cast<double>(i) * static_cast<double>(spacing);
      const double coeff =
          numerator / (denominator * factors.weights[l][static_cast<std::size_t>(i)] * factors.scale);
      acc = axpby(1.0, acc, coeff, table.at(l, i));
    }
    out.per_layer.push_back(std::move(acc));
  }
  return out;
}

/// Per-layer extrapolation k steps past the newest anchor.
inline LayerOutputs predict(const AnchorCache& cache, const DiffTable& table,
                            const SigmaHistory& hist, int k, const PredictorConfig& cfg) {
  detail::require(!cache.empty(), "predict needs at least one anchor");
  detail::require(k >= 1 && k <= cfg.spacing - 1,
                  detail::concat("prediction offset k = ", k, " outside [1, ", cfg.spacing - 1, "]"));
  return predict_with(table, k, cfg.spacing, dynamic_factors(cache, table, hist, cfg));
}

/// Anchors fall on every K-th step counted from the first denoising step.
inline bool is_anchor_step(int step_index, const PredictorConfig& cfg) {
  return step_index % cfg.spacing == 0;
}

/// Number of anchors in a run of `steps` denoising steps: ceil(T / K).
inline int anchor_count(int steps, const PredictorConfig& cfg) {
  return (steps + cfg.spacing - 1) / cfg.spacing;
}

/// Evaluates the model on anchor steps and extrapolates in between.
///
/// Anchor steps re-evaluate every layer and rebuild the difference table and
/// dynamic factors once; the steps up to the next anchor reuse them.
template <LayeredModel Model>
class TaylorStepper {
 public:
  TaylorStepper(const Model& model, const PredictorConfig& cfg, int total_steps)
      : model_(&model), cfg_(cfg), total_steps_(total_steps), cache_(cfg.spacing, cfg.order) {
    cfg.validate();
  }

  Tensor step(const Tensor& z, const Tensor& cond, int step_index, double t, double dt) {
    if (is_anchor_step(step_index, cfg_)) {
      LayerOutputs outputs = model_->eval(z, t, cond);
      Tensor velocity = outputs.final();
      push_anchor(cache_, total_steps_ - step_index, std::move(outputs), hist_);
      table_ = finite_differences(cache_);
      factors_ = dynamic_factors(cache_, table_, hist_, cfg_);
      last_anchor_ = step_index;
      ++evals_;
      return euler_step(z, velocity, dt);
    }
    detail::require(last_anchor_ >= 0, "prediction requested before the first anchor");
    ++predicted_;
    const LayerOutputs pred = predict_with(table_, step_index - last_anchor_, cfg_.spacing, factors_);
    return euler_step(z, pred.final(), dt);
  }

  int evals() const noexcept { return evals_; }
  int predicted() const noexcept { return predicted_; }
  const AnchorCache& cache() const noexcept { return cache_; }
  const SigmaHistory& history() const noexcept { return hist_; }

 private:
  const Model* model_;
  PredictorConfig cfg_;
  int total_steps_;
  AnchorCache cache_;
  SigmaHistory hist_;
  DiffTable table_;
  DynamicFactors factors_;
  int last_anchor_ = -1;
  int evals_ = 0;
  int predicted_ = 0;
};

/// Accelerated counterpart of sample_full.
template <LayeredModel Model>
SampleResult sample_accelerated(const Model& model, const Tensor& z_start, const Tensor& cond,
                                const SamplerConfig& sampler, const PredictorConfig& predictor) {
  TaylorStepper<Model> stepper(model, predictor, sampler.steps);
  return sample_with(stepper, z_start, cond, sampler);
}

}  // namespace latentaccel
