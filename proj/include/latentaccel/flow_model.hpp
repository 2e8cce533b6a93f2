#pragma once

#include <concepts>
#include <cstdint>
#include <optional>
#include <vector>

#include "latentaccel/core.hpp"
#include "latentaccel/norm_fusion.hpp"

namespace latentaccel {

/// Output of every layer of one model evaluation; the last entry is the
/// predicted velocity.
struct LayerOutputs {
  std::vector<Tensor> per_layer;

  std::size_t layer_count() const noexcept { return per_layer.size(); }
  const Tensor& final() const { return per_layer.back(); }

  friend bool operator==(const LayerOutputs&, const LayerOutputs&) = default;
};

/// Anything that maps (latent, timestep, conditioning) to per-layer outputs.
template <class M>
concept LayeredModel = requires(const M& m, const Tensor& z, double t, const Tensor& cond) {
  { m.eval(z, t, cond) } -> std::convertible_to<LayerOutputs>;
};

/// One affine-plus-tanh layer. All matrices are [in, out].
struct ToyLayer {
  Tensor weight;   // [in, out]
  Tensor bias;     // [out]
  Tensor time;     // [out], scaled by t
  Tensor cond;     // [cond width, out]
  Tensor context;  // [in, out], applied to the frame-mean of the input
};

/// Deterministic layered denoiser acting on latents shaped [frames, channels].
///
/// Layer m computes
///   h_m = tanh(h_{m-1} A_m + b_m + t c_m + cond P_m + mean_frames(h_{m-1}) U_m)
/// with h_0 the input frame. Hidden layers have `width` units; the last layer
/// maps back to `channels` and is the velocity. The frame-mean term couples
/// the frames of a window. With a fusion block attached, every hidden
/// pre-activation also receives the fused cross-attention residual.
class ToyModel {
 public:
  struct Dims {
    std::size_t layers = 4;
    std::size_t width = 32;
    std::size_t channels = 8;
    std::size_t cond_width = 4;
  };

  static ToyModel build(std::uint64_t seed, Dims dims) {
    detail::require(dims.layers >= 2, "model needs at least 2 layers");
    detail::require(dims.width >= 2, "model width must be at least 2");
    detail::require(dims.channels >= 1 && dims.cond_width >= 1,
                    "channels and conditioning width must be positive");
    SeededRng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims.width));
    std::vector<ToyLayer> layers;
    for (std::size_t m = 0; m < dims.layers; ++m) {
      const std::size_t in = m == 0 ? dims.channels : dims.width;
      const std::size_t out = m + 1 == dims.layers ? dims.channels : dims.width;
      ToyLayer layer;
      layer.weight = gaussian({in, out}, rng, scale);
      layer.bias = gaussian({out}, rng, scale);
      layer.time = gaussian({out}, rng, scale);
      layer.cond = gaussian({dims.cond_width, out}, rng, scale);
      layer.context = gaussian({in, out}, rng, scale);
      layers.push_back(std::move(layer));
    }
    return ToyModel(dims, std::move(layers));
  }

  static ToyModel build(std::uint64_t seed, std::size_t layers, std::size_t width) {
    Dims d;
    d.layers = layers;
    d.width = width;
    return build(seed, d);
  }

  /// Model with caller-supplied weights; dimensions are checked against `dims`.
  static ToyModel from_layers(Dims dims, std::vector<ToyLayer> layers) {
    detail::require(layers.size() == dims.layers, "layer count does not match dims");
    for (std::size_t m = 0; m < layers.size(); ++m) {
      const std::size_t in = m == 0 ? dims.channels : dims.width;
      const std::size_t out = m + 1 == dims.layers ? dims.channels : dims.width;
      const ToyLayer& l = layers[m];
      detail::require(l.weight.shape() == Shape{in, out} && l.context.shape() == Shape{in, out} &&
                          l.bias.shape() == Shape{out} && l.time.shape() == Shape{out} &&
                          l.cond.shape() == Shape{dims.cond_width, out},
                      detail::concat("layer ", m, " weights have wrong shapes"));
    }
    return ToyModel(dims, std::move(layers));
  }

  /// Copy with every weight, bias and projection replaced by zeros.
  ToyModel zeroed() const {
    std::vector<ToyLayer> layers = layers_;
    for (ToyLayer& l : layers)
      for (Tensor* t : {&l.weight, &l.bias, &l.time, &l.cond, &l.context}) *t = Tensor(t->shape());
    return ToyModel(dims_, std::move(layers));
  }

  /// Copy whose hidden layers also add `block`'s fused residual.
  ToyModel with_fusion(FusionBlock block) const {
    ToyModel m = *this;
    m.fusion_ = std::move(block);
    return m;
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  const std::vector<ToyLayer>& layers() const noexcept { return layers_; }
  bool has_fusion() const noexcept { return fusion_.has_value(); }

  /// Latent shape for a given number of frames.
  Shape latent_shape(std::size_t frames) const { return {frames, dims_.channels}; }

  /// `z` is [frames, channels]; `cond` is [frames, cond width].
  LayerOutputs eval(const Tensor& z, double t, const Tensor& cond) const {
    detail::require(z.rank() == 2 && z.shape()[1] == dims_.channels,
                    detail::concat("model expects latents [frames, ", dims_.channels, "], got ",
                                   shape_string(z.shape())));
    detail::require(cond.rank() == 2 && cond.rows() == z.rows() &&
                        cond.shape()[1] == dims_.cond_width,
                    detail::concat("model expects conditioning [", z.rows(), ", ",
                                   dims_.cond_width, "], got ", shape_string(cond.shape())));
    LayerOutputs out;
    out.per_layer.reserve(layers_.size());
    Tensor h = z;
    for (std::size_t m = 0; m < layers_.size(); ++m) {
      const ToyLayer& l = layers_[m];
      Tensor pre = matmul(h, l.weight) + matmul(cond, l.cond);
      const Tensor row = l.bias + t * l.time + matmul(frame_mean(h), l.context).reshaped(l.bias.shape());
      pre = add_row(pre, row);
      if (fusion_ && m + 1 < layers_.size()) pre = pre + (*fusion_)(pre);
      h = tanh(pre);
      out.per_layer.push_back(h);
    }
    return out;
  }

 private:
  ToyModel(Dims dims, std::vector<ToyLayer> layers) : dims_(dims), layers_(std::move(layers)) {}

  static Tensor frame_mean(const Tensor& h) {
    const std::size_t n = h.rows(), w = h.shape()[1];
    Tensor out({1, w});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) out[j] += h.at(i, j);
    for (std::size_t j = 0; j < w; ++j) out[j] /= static_cast<double>(n);
    return out;
  }

  Dims dims_;
  std::vector<ToyLayer> layers_;
  std::optional<FusionBlock> fusion_;
};

// ---------------------------------------------------------------------------
// Rectified flow

/// x_t = (1 - t) x0 + t x1.
inline Tensor forward_diffuse(const Tensor& x0, const Tensor& x1, double t) {
  detail::require(t >= 0.0 && t <= 1.0, detail::concat("t must lie in [0, 1], got ", t));
  return axpby(1.0 - t, x0, t, x1);
}

/// MSE between a predicted velocity and the target x1 - x0.
inline double velocity_loss(const Tensor& pred, const Tensor& x0, const Tensor& x1) {
  require_same_shape(pred, x0, "velocity_loss");
  require_same_shape(x0, x1, "velocity_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - (x1[i] - x0[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

struct MaskPair {
  Tensor face;
  Tensor lip;

  MaskPair(Tensor face_mask, Tensor lip_mask) : face(std::move(face_mask)), lip(std::move(lip_mask)) {
    require_same_shape(face, lip, "MaskPair");
    for (const Tensor* m : {&face, &lip})
      for (double v : m->values())
        detail::require(v >= 0.0 && v <= 1.0, "mask elements must lie in [0, 1]");
  }
};

/// Mean over elements of ((z_gt - z_eps) * (1 + face + lip))^2.
inline double masked_recon_loss(const Tensor& z_gt, const Tensor& z_eps, const MaskPair& masks) {
  require_same_shape(z_gt, z_eps, "masked_recon_loss");
  require_same_shape(z_gt, masks.face, "masked_recon_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < z_gt.size(); ++i) {
    const double d = (z_gt[i] - z_eps[i]) * (1.0 + masks.face[i] + masks.lip[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(z_gt.size());
}

/// One explicit Euler step from t toward 0: z - dt * v.
inline Tensor euler_step(const Tensor& z, const Tensor& v, double dt) {
  detail::require(dt > 0.0, "euler_step needs dt > 0");
  return axpby(1.0, z, -dt, v);
}

// ---------------------------------------------------------------------------
// Sampling

struct SamplerConfig {
  int steps = 50;
  /// Optional custom timesteps: steps + 1 strictly decreasing values in [0, 1].
  std::vector<double> schedule;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(steps >= 1, "sampler steps must be >= 1");
    if (schedule.empty()) return;
    detail::require(schedule.size() == static_cast<std::size_t>(steps) + 1,
                    "custom schedule needs steps + 1 entries");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      detail::require(schedule[i] >= 0.0 && schedule[i] <= 1.0,
                      "schedule timesteps must lie in [0, 1]");
      if (i > 0)
        detail::require(schedule[i] < schedule[i - 1], "schedule must be strictly decreasing");
    }
  }

  /// t_0 = 1 > t_1 > ... > t_T = 0 unless a custom schedule is given.
  std::vector<double> timesteps() const {
    validate();
    if (!schedule.empty()) return schedule;
    std::vector<double> ts(static_cast<std::size_t>(steps) + 1);
    for (int j = 0; j <= steps; ++j)
      ts[static_cast<std::size_t>(j)] = 1.0 - static_cast<double>(j) / steps;
    return ts;
  }
};

struct SampleResult {
  std::vector<Tensor> trajectory;  // steps + 1 latents, starting at z_T
  int evals = 0;
  int predicted = 0;
};

/// Evaluates the model at every step.
template <LayeredModel Model>
class FullStepper {
 public:
  explicit FullStepper(const Model& model) : model_(&model) {}

  Tensor step(const Tensor& z, const Tensor& cond, int /*step_index*/, double t, double dt) {
    ++evals_;
    return euler_step(z, model_->eval(z, t, cond).final(), dt);
  }

  int evals() const noexcept { return evals_; }
  int predicted() const noexcept { return 0; }

 private:
  const Model* model_;
  int evals_ = 0;
};

/// Drives any stepper across the schedule.
template <class Stepper>
SampleResult sample_with(Stepper& stepper, const Tensor& z_start, const Tensor& cond,
                         const SamplerConfig& cfg) {
  const std::vector<double> ts = cfg.timesteps();
  SampleResult result;
  result.trajectory.reserve(ts.size());
  result.trajectory.push_back(z_start);
  for (int j = 0; j < cfg.steps; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    result.trajectory.push_back(
        stepper.step(result.trajectory.back(), cond, j, ts[uj], ts[uj] - ts[uj + 1]));
  }
  result.evals = stepper.evals();
  result.predicted = stepper.predicted();
  return result;
}

/// Non-accelerated reference sampler.
template <LayeredModel Model>
SampleResult sample_full(const Model& model, const Tensor& z_start, const Tensor& cond,
                         const SamplerConfig& cfg) {
  FullStepper<Model> stepper(model);
  return sample_with(stepper, z_start, cond, cfg);
}

}  // namespace latentaccel
