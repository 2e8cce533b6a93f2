#include <gtest/gtest.h>

#include <cmath>

#include "latentaccel/norm_fusion.hpp"

using namespace latentaccel;

namespace {

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "element " << i;
}

Tensor random_rows(SeededRng& rng, std::size_t rows, std::size_t cols) {
  const double scale = std::exp(4.0 * rng.uniform() - 2.0);
  Tensor t = gaussian({rows, cols}, rng, scale);
  const double shift = 10.0 * rng.uniform() - 5.0;
  for (double& v : t.values()) v += shift;
  return t;
}

}  // namespace

TEST(NormalizeFuse, HandExample) {
  const Tensor z_p = Tensor::vector({1.0, 3.0});
  const Tensor z_img = Tensor::vector({10.0, 20.0});
  const Tensor fused = normalize_fuse(z_img, z_p);
  expect_near(fused - z_img, Tensor::vector({10.0, 20.0}), 1e-12);
  expect_near(fused, Tensor::vector({20.0, 40.0}), 1e-12);
}

TEST(NormalizeFuse, AlreadyAlignedIsPlainSum) {
  SeededRng rng(1);
  const Tensor z_img = random_rows(rng, 6, 5);
  const Tensor z_p = normalize_to(random_rows(rng, 6, 5), stats(z_img));
  expect_near(normalize_fuse(z_img, z_p), z_p + z_img, 1e-12);
}

TEST(NormalizeFuse, ConstantPortraitCollapsesToImageMean) {
  const Tensor z_img = Tensor::vector({1.0, 2.0, 6.0});
  const Tensor fused = normalize_fuse(z_img, Tensor({3}, 4.0));
  const double mu = stats(z_img).mean;
  expect_near(fused - z_img, Tensor({3}, mu), 1e-12);
}

TEST(NormalizeFuse, AlignsMomentsProperty) {
  SeededRng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z_img = random_rows(rng, 7, 6);
    const Tensor z_p = random_rows(rng, 7, 6);
    const FeatureStats aligned = stats(normalize_fuse(z_img, z_p) - z_img);
    const FeatureStats target = stats(z_img);
    EXPECT_NEAR(aligned.mean, target.mean, 1e-9);
    EXPECT_NEAR(aligned.std, target.std, 1e-9);
  }
}

TEST(NormalizeFuse, AffineInvarianceProperty) {
  SeededRng rng(78);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z_img = random_rows(rng, 5, 4);
    const Tensor z_p = random_rows(rng, 5, 4);
    const double a = 0.05 + 20.0 * rng.uniform();
    const double b = 40.0 * rng.uniform() - 20.0;
    Tensor shifted = a * z_p;
    for (double& v : shifted.values()) v += b;
    expect_near(normalize_fuse(z_img, shifted), normalize_fuse(z_img, z_p), 1e-9);
  }
}

TEST(NormalizeFuse, AlignmentIsIdempotent) {
  SeededRng rng(79);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z_img = random_rows(rng, 4, 8);
    const Tensor aligned = normalize_fuse(z_img, random_rows(rng, 4, 8)) - z_img;
    expect_near(normalize_fuse(z_img, aligned) - z_img, aligned, 1e-9);
  }
}

TEST(NormalizeFuse, PerChannelAlignsEachChannel) {
  SeededRng rng(80);
  const Tensor z_img = random_rows(rng, 9, 3);
  const Tensor aligned = normalize_fuse(z_img, random_rows(rng, 9, 3), StatsAxis::per_channel) - z_img;
  const auto got = channel_stats(aligned), want = channel_stats(z_img);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(got[c].mean, want[c].mean, 1e-9);
    EXPECT_NEAR(got[c].std, want[c].std, 1e-9);
  }
}

TEST(NormalizeFuse, ShapeMismatchThrows) {
  EXPECT_THROW(normalize_fuse(Tensor({2}), Tensor({3})), InvalidArgument);
}

TEST(Fuse, AblationVariants) {
  const Tensor z_p = Tensor::vector({1.0, 3.0});
  const Tensor z_img = Tensor::vector({10.0, 20.0});
  expect_near(fuse(z_img, z_p, FusionMode::baseline_add), Tensor::vector({11.0, 23.0}), 1e-12);
  expect_near(fuse(z_img, z_p, FusionMode::pure_norm), Tensor::vector({9.0, 21.0}), 1e-12);
  expect_near(fuse(z_img, z_p, FusionMode::centralization), Tensor::vector({-2.0, 2.0}), 1e-12);
  expect_near(fuse(z_img, z_p, FusionMode::ours), Tensor::vector({20.0, 40.0}), 1e-12);
}

TEST(FusionMode, NamesRoundTrip) {
  for (FusionMode m : {FusionMode::ours, FusionMode::pure_norm, FusionMode::centralization,
                       FusionMode::baseline_add})
    EXPECT_EQ(parse_fusion_mode(to_string(m)), m);
  EXPECT_THROW(parse_fusion_mode("adain"), InvalidArgument);
}

TEST(PortraitEmbedding, ZeroInputsWithZeroBiasesGiveZero) {
  const AttnStub stub = AttnStub::build(3).without_biases();
  const Tensor out = build_portrait_embedding(Tensor({4, stub.dims.mouth_width}),
                                              Tensor({4, stub.dims.expression_width}), stub);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(PortraitEmbedding, WidthIsSumOfParts) {
  AttnStubDims dims;
  dims.mouth_out = 3;
  dims.expression_out = 5;
  dims.joint_out = 7;
  const AttnStub stub = AttnStub::build(4, dims);
  SeededRng rng(5);
  const Tensor out = build_portrait_embedding(gaussian({6, dims.mouth_width}, rng),
                                              gaussian({6, dims.expression_width}, rng), stub);
  EXPECT_EQ(out.shape(), (Shape{6, 15}));
}

TEST(PortraitEmbedding, DeterministicPerSeed) {
  SeededRng rng(6);
  const AttnStub stub = AttnStub::build(9);
  const Tensor m = gaussian({3, stub.dims.mouth_width}, rng);
  const Tensor e = gaussian({3, stub.dims.expression_width}, rng);
  EXPECT_EQ(build_portrait_embedding(m, e, AttnStub::build(9)), build_portrait_embedding(m, e, stub));
}

TEST(PortraitEmbedding, WidthMismatchThrows) {
  const AttnStub stub = AttnStub::build(1);
  EXPECT_THROW(build_portrait_embedding(Tensor({2, stub.dims.mouth_width + 1}),
                                        Tensor({2, stub.dims.expression_width}), stub),
               InvalidArgument);
  EXPECT_THROW(build_portrait_embedding(Tensor({2, stub.dims.mouth_width}),
                                        Tensor({3, stub.dims.expression_width}), stub),
               InvalidArgument);
}

TEST(CrossAttend, SingleKeyReturnsItsValue) {
  SeededRng rng(10);
  const auto proj = AttentionProjections::random(6, 4, 3, 6, rng);
  const Tensor z = gaussian({5, 6}, rng);
  const Tensor emb = gaussian({1, 4}, rng);
  const Tensor out = cross_attend(z, emb, proj);
  const Tensor value = proj.value(emb);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(out.at(i, j), value.at(0, j), 1e-12);
}

TEST(CrossAttend, KeyPermutationInvariance) {
  SeededRng rng(11);
  const auto proj = AttentionProjections::random(6, 4, 3, 6, rng);
  const Tensor z = gaussian({5, 6}, rng);
  const Tensor emb = gaussian({4, 4}, rng);
  Tensor permuted(emb.shape());
  const std::size_t order[] = {2, 0, 3, 1};
  for (std::size_t i = 0; i < 4; ++i) permuted.assign_rows(i, emb.slice_rows(order[i], order[i] + 1));
  expect_near(cross_attend(z, permuted, proj), cross_attend(z, emb, proj), 1e-12);
}

TEST(CrossAttend, ZeroValueProjectionGivesZero) {
  SeededRng rng(12);
  auto proj = AttentionProjections::random(6, 4, 3, 6, rng);
  proj.value.weight = Tensor(proj.value.weight.shape());
  const Tensor out = cross_attend(gaussian({2, 6}, rng), gaussian({3, 4}, rng), proj);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(CrossAttend, WidthMismatchThrows) {
  SeededRng rng(13);
  const auto proj = AttentionProjections::random(6, 4, 3, 6, rng);
  EXPECT_THROW(cross_attend(Tensor({2, 5}), Tensor({3, 4}), proj), InvalidArgument);
  EXPECT_THROW(cross_attend(Tensor({2, 6}), Tensor({3, 5}), proj), InvalidArgument);
}

TEST(FusionBlock, OutputMatchesLatentShape) {
  const FusionBlock block = FusionBlock::build(21, 10, FusionMode::ours);
  SeededRng rng(22);
  const Tensor z = gaussian({7, 10}, rng);
  const Tensor out = block(z);
  EXPECT_EQ(out.shape(), z.shape());
}
