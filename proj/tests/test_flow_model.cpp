#include <gtest/gtest.h>

#include <cmath>

#include "latentaccel/flow_model.hpp"

using namespace latentaccel;

namespace {

std::uint64_t weight_checksum(const ToyModel& m) {
  std::uint64_t h = 0;
  for (const ToyLayer& l : m.layers())
    for (const Tensor* t : {&l.weight, &l.bias, &l.time, &l.cond, &l.context})
      h = h * 31 + checksum(*t);
  return h;
}

/// Model whose velocity is the constant tanh(bias) everywhere.
ToyModel constant_field(const ToyModel& base, double bias) {
  std::vector<ToyLayer> layers = base.zeroed().layers();
  layers.back().bias = Tensor(layers.back().bias.shape(), bias);
  return ToyModel::from_layers(base.dims(), std::move(layers));
}

}  // namespace

TEST(ToyModel, BuildIsDeterministic) {
  EXPECT_EQ(weight_checksum(ToyModel::build(0, 4, 32)), weight_checksum(ToyModel::build(0, 4, 32)));
  EXPECT_NE(weight_checksum(ToyModel::build(0, 4, 32)), weight_checksum(ToyModel::build(1, 4, 32)));
}

TEST(ToyModel, EvalReturnsOneOutputPerLayer) {
  const ToyModel m = ToyModel::build(2, 4, 16);
  SeededRng rng(3);
  const LayerOutputs out = m.eval(gaussian(m.latent_shape(5), rng), 0.7, gaussian({5, 4}, rng));
  ASSERT_EQ(out.layer_count(), 4u);
  for (std::size_t l = 0; l + 1 < 4; ++l) EXPECT_EQ(out.per_layer[l].shape(), (Shape{5, 16}));
  EXPECT_EQ(out.final().shape(), (Shape{5, 8}));
}

TEST(ToyModel, ZeroWeightsGiveZeroOutputs) {
  const ToyModel m = ToyModel::build(2, 3, 8).zeroed();
  SeededRng rng(4);
  const LayerOutputs out = m.eval(gaussian(m.latent_shape(3), rng), 0.3, gaussian({3, 4}, rng));
  for (const Tensor& t : out.per_layer)
    for (double v : t.values()) EXPECT_EQ(v, 0.0);
}

TEST(ToyModel, EvalIsDeterministic) {
  const ToyModel m = ToyModel::build(5, 4, 12);
  SeededRng rng(6);
  const Tensor z = gaussian(m.latent_shape(4), rng), c = gaussian({4, 4}, rng);
  EXPECT_EQ(m.eval(z, 0.4, c), m.eval(z, 0.4, c));
}

TEST(ToyModel, InvalidDimensionsThrow) {
  EXPECT_THROW(ToyModel::build(0, 1, 8), InvalidArgument);
  EXPECT_THROW(ToyModel::build(0, 3, 1), InvalidArgument);
  const ToyModel m = ToyModel::build(0, 3, 8);
  EXPECT_THROW(m.eval(Tensor({2, 7}), 0.5, Tensor({2, 4})), InvalidArgument);
  EXPECT_THROW(m.eval(Tensor({2, 8}), 0.5, Tensor({3, 4})), InvalidArgument);
  std::vector<ToyLayer> layers = m.layers();
  layers[1].weight = Tensor({3, 3});
  EXPECT_THROW(ToyModel::from_layers(m.dims(), layers), InvalidArgument);
}

TEST(ToyModel, FusionChangesHiddenLayersOnly) {
  const ToyModel plain = ToyModel::build(7, 3, 10);
  const ToyModel fused = plain.with_fusion(FusionBlock::build(8, 10, FusionMode::ours));
  SeededRng rng(9);
  const Tensor z = gaussian(plain.latent_shape(4), rng), c = gaussian({4, 4}, rng);
  const LayerOutputs a = plain.eval(z, 0.5, c), b = fused.eval(z, 0.5, c);
  EXPECT_NE(a.per_layer[0], b.per_layer[0]);
  EXPECT_EQ(b, fused.eval(z, 0.5, c));
  EXPECT_TRUE(fused.has_fusion());
}

TEST(ForwardDiffuse, Endpoints) {
  SeededRng rng(1);
  const Tensor x0 = gaussian({6}, rng), x1 = gaussian({6}, rng);
  EXPECT_EQ(forward_diffuse(x0, x1, 0.0), x0);
  EXPECT_EQ(forward_diffuse(x0, x1, 1.0), x1);
  EXPECT_EQ(forward_diffuse(Tensor({3}, 0.0), Tensor({3}, 2.0), 0.5), Tensor({3}, 1.0));
  EXPECT_THROW(forward_diffuse(x0, x1, 1.5), InvalidArgument);
  EXPECT_THROW(forward_diffuse(x0, x1, -0.1), InvalidArgument);
}

TEST(ForwardDiffuse, AffineInTimeProperty) {
  SeededRng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x0 = gaussian({5}, rng), x1 = gaussian({5}, rng);
    const double t1 = rng.uniform(), t2 = rng.uniform(), a = rng.uniform();
    const Tensor lhs = forward_diffuse(x0, x1, a * t1 + (1 - a) * t2);
    const Tensor rhs = axpby(a, forward_diffuse(x0, x1, t1), 1 - a, forward_diffuse(x0, x1, t2));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
  }
}

TEST(VelocityLoss, Examples) {
  SeededRng rng(3);
  const Tensor x0 = gaussian({8}, rng), x1 = gaussian({8}, rng);
  EXPECT_EQ(velocity_loss(x1 - x0, x0, x1), 0.0);
  EXPECT_DOUBLE_EQ(velocity_loss(Tensor({4}), Tensor({4}, 0.0), Tensor({4}, 1.0)), 1.0);
  const Tensor err = gaussian({8}, rng);
  const double base = velocity_loss((x1 - x0) + err, x0, x1);
  EXPECT_NEAR(velocity_loss((x1 - x0) + 2.0 * err, x0, x1), 4.0 * base, 1e-12);
  EXPECT_THROW(velocity_loss(Tensor({3}), Tensor({4}), Tensor({4})), InvalidArgument);
}

TEST(VelocityLoss, FiniteDifferenceGradient) {
  SeededRng rng(4);
  const Tensor x0 = gaussian({10}, rng), x1 = gaussian({10}, rng), pred = gaussian({10}, rng);
  const double h = 1e-6;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    Tensor up = pred, down = pred;
    up[i] += h;
    down[i] -= h;
    const double numeric = (velocity_loss(up, x0, x1) - velocity_loss(down, x0, x1)) / (2 * h);
    const double analytic = 2.0 * (pred[i] - (x1[i] - x0[i])) / static_cast<double>(pred.size());
    EXPECT_NEAR(numeric, analytic, 1e-5);
  }
}

TEST(MaskedReconLoss, Examples) {
  SeededRng rng(5);
  const Tensor z = gaussian({2, 3}, rng);
  const MaskPair zero(Tensor({2, 3}), Tensor({2, 3}));
  EXPECT_EQ(masked_recon_loss(z, z, zero), 0.0);

  const Tensor ones({2, 3}, 1.0);
  const Tensor other = gaussian({2, 3}, rng);
  EXPECT_NEAR(masked_recon_loss(z, other, zero), velocity_loss(other, Tensor({2, 3}), z), 1e-12);

  EXPECT_DOUBLE_EQ(masked_recon_loss(ones, Tensor({2, 3}), MaskPair(ones, Tensor({2, 3}))), 4.0);
}

TEST(MaskedReconLoss, NonNegativeAndMatchesMseProperty) {
  SeededRng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = gaussian({4, 4}, rng), b = gaussian({4, 4}, rng);
    Tensor face({4, 4}), lip({4, 4});
    for (double& v : face.values()) v = rng.uniform();
    for (double& v : lip.values()) v = rng.uniform();
    EXPECT_GE(masked_recon_loss(a, b, MaskPair(face, lip)), 0.0);
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= static_cast<double>(a.size());
    EXPECT_NEAR(masked_recon_loss(a, b, MaskPair(Tensor({4, 4}), Tensor({4, 4}))), mse, 1e-12);
  }
}

TEST(MaskedReconLoss, RejectsBadMasks) {
  EXPECT_THROW(MaskPair(Tensor({2}, 1.5), Tensor({2})), InvalidArgument);
  EXPECT_THROW(MaskPair(Tensor({2}), Tensor({3})), InvalidArgument);
  EXPECT_THROW(masked_recon_loss(Tensor({3}), Tensor({3}), MaskPair(Tensor({2}), Tensor({2}))),
               InvalidArgument);
}

TEST(EulerStep, Examples) {
  const Tensor z({3}, 1.0);
  EXPECT_EQ(euler_step(z, Tensor({3}), 0.1), z);
  EXPECT_EQ(euler_step(z, Tensor({3}, 1.0), 0.5), Tensor({3}, 0.5));
  const Tensor v = Tensor::vector({0.25, -1.0, 2.0});
  EXPECT_EQ(euler_step(euler_step(z, v, 0.25), v, 0.25), euler_step(z, v, 0.5));
  EXPECT_THROW(euler_step(z, v, 0.0), InvalidArgument);
}

TEST(SamplerConfig, ScheduleAndValidation) {
  SamplerConfig cfg;
  cfg.steps = 4;
  EXPECT_EQ(cfg.timesteps(), (std::vector<double>{1.0, 0.75, 0.5, 0.25, 0.0}));
  cfg.schedule = {1.0, 0.9, 0.5, 0.1, 0.0};
  EXPECT_EQ(cfg.timesteps(), cfg.schedule);
  cfg.schedule = {1.0, 0.9, 0.9, 0.1, 0.0};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg.schedule = {1.0, 0.5, 0.0};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg.schedule.clear();
  cfg.steps = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(SampleFull, ConstantFieldGivesAffineTrajectory) {
  const ToyModel m = constant_field(ToyModel::build(1, 3, 6), 0.5);
  SeededRng rng(7);
  const Tensor z = gaussian(m.latent_shape(4), rng);
  SamplerConfig cfg;
  cfg.steps = 10;
  const SampleResult r = sample_full(m, z, gaussian({4, 4}, rng), cfg);
  ASSERT_EQ(r.trajectory.size(), 11u);
  const double v = std::tanh(0.5);
  for (std::size_t j = 0; j < r.trajectory.size(); ++j)
    for (std::size_t i = 0; i < z.size(); ++i)
      EXPECT_NEAR(r.trajectory[j][i], z[i] - v * static_cast<double>(j) / 10.0, 1e-12);
}

TEST(SampleFull, EvalCountAndDeterminism) {
  const ToyModel m = ToyModel::build(2, 4, 16);
  SeededRng rng(8);
  const Tensor z = gaussian(m.latent_shape(6), rng), c = gaussian({6, 4}, rng);
  SamplerConfig one;
  one.steps = 1;
  EXPECT_EQ(sample_full(m, z, c, one).evals, 1);

  SamplerConfig cfg;
  const SampleResult a = sample_full(m, z, c, cfg), b = sample_full(m, z, c, cfg);
  EXPECT_EQ(a.evals, 50);
  EXPECT_EQ(a.predicted, 0);
  EXPECT_EQ(a.trajectory, b.trajectory);
}
