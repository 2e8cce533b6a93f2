#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "latentaccel/core.hpp"

namespace latentaccel {

/// How the portrait stream is merged into the image stream.
enum class FusionMode {
  ours,            // align p to img stats, then add
  pure_norm,       // standardize p, then add
  centralization,  // standardize both, then add
  baseline_add,    // plain residual add
};

inline std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::ours: return "ours";
    case FusionMode::pure_norm: return "pure-norm";
    case FusionMode::centralization: return "centralization";
    case FusionMode::baseline_add: return "baseline-add";
  }
  return "?";
}

inline FusionMode parse_fusion_mode(std::string_view name) {
  for (FusionMode m : {FusionMode::ours, FusionMode::pure_norm, FusionMode::centralization,
                       FusionMode::baseline_add})
    if (to_string(m) == name) return m;
  throw InvalidArgument(detail::concat("unknown fusion mode '", name, "'"));
}

/// Rescales `z_p` onto the first two moments of `z_img` and adds the two
/// streams. With `StatsAxis::per_channel` the moments are matched per
/// last-axis channel.
inline Tensor normalize_fuse(const Tensor& z_img, const Tensor& z_p,
                             StatsAxis axis = StatsAxis::global) {
  require_same_shape(z_img, z_p, "normalize_fuse");
  if (axis == StatsAxis::global) return normalize_to(z_p, stats(z_img)) + z_img;
  return normalize_to(z_p, channel_stats(z_img)) + z_img;
}

/// normalize_fuse plus the three ablation variants.
inline Tensor fuse(const Tensor& z_img, const Tensor& z_p, FusionMode mode,
                   StatsAxis axis = StatsAxis::global) {
  require_same_shape(z_img, z_p, "fuse");
  const auto standardize = [axis](const Tensor& x) {
    if (axis == StatsAxis::global) return normalize_to(x, FeatureStats{0.0, 1.0});
    return normalize_to(x, std::vector<FeatureStats>(x.shape().back(), FeatureStats{0.0, 1.0}));
  };
  switch (mode) {
    case FusionMode::ours: return normalize_fuse(z_img, z_p, axis);
    case FusionMode::pure_norm: return standardize(z_p) + z_img;
    case FusionMode::centralization: return standardize(z_p) + standardize(z_img);
    case FusionMode::baseline_add: return z_p + z_img;
  }
  throw InvalidArgument("fuse: unknown mode");
}

// ---------------------------------------------------------------------------
// Attention stubs. Every matrix is stored [in, out] so a token batch
// [tokens, in] maps to [tokens, out] with a single matmul.

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  std::size_t in() const { return weight.shape()[0]; }
  std::size_t out() const { return weight.shape()[1]; }

  Tensor operator()(const Tensor& x) const {
    detail::require(x.rank() == 2 && x.shape()[1] == in(),
                    detail::concat("linear layer expects width ", in(), ", got ",
                                   shape_string(x.shape())));
    return add_row(matmul(x, weight), bias);
  }

  static Linear random(std::size_t in, std::size_t out, SeededRng& rng, bool with_bias = true) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l{gaussian({in, out}, rng, scale), Tensor({out})};
    if (with_bias) l.bias = gaussian({out}, rng, scale);
    return l;
  }
};

/// Single-head scaled dot-product attention: softmax(q·kᵀ/√d)·v.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  detail::require(q.shape()[1] == k.shape()[1], "attention: query/key width mismatch");
  detail::require(k.rows() == v.rows(), "attention: key/value token count mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
  return matmul(softmax_rows(scale * matmul(q, transpose(k))), v);
}

/// Query/key/value projections of one attention stream.
struct AttentionProjections {
  Linear query, key, value;

  static AttentionProjections random(std::size_t query_width, std::size_t key_width,
                                     std::size_t head_width, std::size_t value_out,
                                     SeededRng& rng) {
    return {Linear::random(query_width, head_width, rng, false),
            Linear::random(key_width, head_width, rng, false),
            Linear::random(key_width, value_out, rng, false)};
  }
};

inline Tensor self_attend(const Tensor& x, const AttentionProjections& p) {
  return attention(p.query(x), p.key(x), p.value(x));
}

/// Two-layer tanh perceptron; used for both the FFN and MLP slots.
struct FeedForward {
  Linear up, down;
  Tensor operator()(const Tensor& x) const { return down(tanh(up(x))); }
};

struct AttnStubDims {
  std::size_t mouth_width = 8;
  std::size_t expression_width = 12;
  std::size_t head_width = 8;
  std::size_t hidden_width = 16;
  std::size_t mouth_out = 8;
  std::size_t expression_out = 8;
  std::size_t joint_out = 8;
};

/// Seeded stand-ins for the self-attention, FFN and MLP blocks that build
/// the portrait embedding.
struct AttnStub {
  AttnStubDims dims;
  AttentionProjections sa_mouth, sa_expression;
  FeedForward ffn_mouth, ffn_expression, mlp_joint;

  std::size_t portrait_width() const {
    return dims.mouth_out + dims.expression_out + dims.joint_out;
  }

  static AttnStub build(std::uint64_t seed, AttnStubDims d = {}) {
    SeededRng rng(seed);
    const auto ff = [&rng](std::size_t in, std::size_t hidden, std::size_t out) {
      return FeedForward{Linear::random(in, hidden, rng), Linear::random(hidden, out, rng)};
    };
    AttnStub s;
    s.dims = d;
    s.sa_mouth = AttentionProjections::random(d.mouth_width, d.mouth_width, d.head_width,
                                              d.mouth_width, rng);
    s.sa_expression = AttentionProjections::random(d.expression_width, d.expression_width,
                                                   d.head_width, d.expression_width, rng);
    s.ffn_mouth = ff(d.mouth_width, d.hidden_width, d.mouth_out);
    s.ffn_expression = ff(d.expression_width, d.hidden_width, d.expression_out);
    s.mlp_joint = ff(d.mouth_width + d.expression_width, d.hidden_width, d.joint_out);
    return s;
  }

  /// Same stub with every bias set to zero.
  AttnStub without_biases() const {
    AttnStub s = *this;
    for (Linear* l : {&s.ffn_mouth.up, &s.ffn_mouth.down, &s.ffn_expression.up,
                      &s.ffn_expression.down, &s.mlp_joint.up, &s.mlp_joint.down})
      l->bias = Tensor(l->bias.shape());
    return s;
  }
};

/// Portrait embedding: [FFN(SA(mouth)) | FFN(SA(expression)) | MLP(mouth | expression)].
/// Inputs are token batches with equal token count.
inline Tensor build_portrait_embedding(const Tensor& emb_mouth, const Tensor& emb_expression,
                                       const AttnStub& stub) {
  detail::require(emb_mouth.rank() == 2 && emb_mouth.shape()[1] == stub.dims.mouth_width,
                  detail::concat("mouth embedding must be [tokens, ", stub.dims.mouth_width,
                                 "], got ", shape_string(emb_mouth.shape())));
  detail::require(emb_expression.rank() == 2 &&
                      emb_expression.shape()[1] == stub.dims.expression_width,
                  detail::concat("expression embedding must be [tokens, ",
                                 stub.dims.expression_width, "], got ",
                                 shape_string(emb_expression.shape())));
  detail::require(emb_mouth.rows() == emb_expression.rows(),
                  "mouth and expression embeddings need equal token counts");
  Tensor mouth = stub.ffn_mouth(self_attend(emb_mouth, stub.sa_mouth));
  Tensor expression = stub.ffn_expression(self_attend(emb_expression, stub.sa_expression));
  Tensor joint = stub.mlp_joint(concat_columns({emb_mouth, emb_expression}));
  return concat_columns({mouth, expression, joint});
}

/// Latent tokens [n, d] attend to embedding tokens [m, e]; output is [n, d].
inline Tensor cross_attend(const Tensor& z, const Tensor& emb, const AttentionProjections& p) {
  detail::require(z.rank() == 2 && emb.rank() == 2, "cross_attend expects rank-2 inputs");
  detail::require(z.shape()[1] == p.query.in() && p.value.out() == z.shape()[1],
                  detail::concat("cross_attend: latent width ", z.shape()[1],
                                 " does not match projections"));
  detail::require(emb.shape()[1] == p.key.in(),
                  detail::concat("cross_attend: embedding width ", emb.shape()[1],
                                 " does not match key projection ", p.key.in()));
  return attention(p.query(z), p.key(emb), p.value(emb));
}

/// Everything needed to run the facial-expression block inside a layer of
/// width `latent_width`: the two embedding streams and their cross-attention
/// projections.
struct FusionBlock {
  FusionMode mode = FusionMode::ours;
  StatsAxis axis = StatsAxis::global;
  Tensor emb_img;       // [image tokens, image width]
  Tensor emb_portrait;  // [portrait tokens, portrait width]
  AttentionProjections ca_img, ca_portrait;

  /// Fused residual for latent tokens `z`.
  Tensor operator()(const Tensor& z) const {
    return fuse(cross_attend(z, emb_img, ca_img), cross_attend(z, emb_portrait, ca_portrait),
                mode, axis);
  }

  /// Seeded embeddings and projections for a layer width; the portrait
  /// stream goes through build_portrait_embedding.
  static FusionBlock build(std::uint64_t seed, std::size_t latent_width, FusionMode mode,
                           std::size_t tokens = 4, std::size_t image_width = 16) {
    const AttnStub stub = AttnStub::build(seed);
    SeededRng rng(seed ^ 0x5bd1e995ULL);
    FusionBlock b;
    b.mode = mode;
    b.emb_img = gaussian({tokens, image_width}, rng);
    b.emb_portrait = build_portrait_embedding(gaussian({tokens, stub.dims.mouth_width}, rng),
                                              gaussian({tokens, stub.dims.expression_width}, rng),
                                              stub);
    b.ca_img = AttentionProjections::random(latent_width, image_width, stub.dims.head_width,
                                            latent_width, rng);
    b.ca_portrait = AttentionProjections::random(latent_width, stub.portrait_width(),
                                                 stub.dims.head_width, latent_width, rng);
    return b;
  }
};

}  // namespace latentaccel
