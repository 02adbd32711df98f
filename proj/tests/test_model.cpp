#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "strep/trainer.hpp"

using namespace strep;

namespace {

// z_k = sum_{j<=k} w^(k-j) * raw_j, evaluated directly.
RowMatrix closed_form(const LatentChain& c) {
  RowMatrix out = RowMatrix::Zero(c.raw.rows(), c.raw.cols());
  for (Eigen::Index k = 0; k < c.raw.rows(); ++k)
    for (Eigen::Index j = 0; j <= k; ++j)
      for (Eigen::Index d = 0; d < c.raw.cols(); ++d)
        out(k, d) += std::pow(c.decay(0, d), double(k - j)) * c.raw(j, d);
  return out;
}

RowMatrix random_points(Eigen::Index n, int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  RowMatrix m(n, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

DecoderConfig live_head(int dim) {
  DecoderConfig c = DecoderConfig::defaults_for(dim);
  c.head_init_scale = 1.0;
  return c;
}

}  // namespace

TEST(FuseLatents, ZeroDecayIsMemoryless) {
  std::mt19937_64 rng(1);
  LatentChain c = make_latents(6, 4, rng, 0.0);
  EXPECT_EQ(fuse_latents(c), c.raw);
}

TEST(FuseLatents, UnitDecayIsRunningSum) {
  LatentChain c{RowMatrix::Constant(5, 3, 0.25), RowMatrix::Ones(1, 3)};
  const RowMatrix z = fuse_latents(c);
  for (Eigen::Index k = 0; k < 5; ++k)
    for (Eigen::Index d = 0; d < 3; ++d) EXPECT_DOUBLE_EQ(z(k, d), 0.25 * double(k + 1));
}

TEST(FuseLatents, MatchesClosedFormOnRandomChains) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  std::uniform_int_distribution<int> len(1, 32);
  for (int trial = 0; trial < 50; ++trial) {
    LatentChain c = make_latents(len(rng), 16, rng);
    for (Eigen::Index d = 0; d < 16; ++d) c.decay(0, d) = w(rng);
    const RowMatrix diff = fuse_latents(c) - closed_form(c);
    ASSERT_LT(diff.cwiseAbs().maxCoeff(), 1e-12) << "trial " << trial;
  }
}

TEST(FuseLatents, GraphFormAgreesAndHasGeometricGradient) {
  std::mt19937_64 rng(3);
  LatentChain c = make_latents(5, 3, rng);
  c.decay << 0.5, -0.25, 0.0;
  ad::Graph g;
  ad::Var raw = g.parameter(c.raw, 0);
  ad::Var decay = g.parameter(c.decay, 1);
  std::vector<ad::Var> fused = fuse_latents(raw, decay);
  const RowMatrix ref = fuse_latents(c);
  ad::Var total = ad::sum(fused[0]);
  for (std::size_t k = 0; k < fused.size(); ++k) {
    EXPECT_LT((fused[k].value() - ref.row(Eigen::Index(k))).cwiseAbs().maxCoeff(), 1e-15);
    if (k > 0) total = ad::add(total, ad::sum(fused[k]));
  }
  // d(sum_k z_k)/d raw_j = sum_{m=0}^{K-1-j} w^m.
  const ad::Gradients grads = g.backward(total);
  for (Eigen::Index j = 0; j < 5; ++j)
    for (Eigen::Index d = 0; d < 3; ++d) {
      double expect = 0.0;
      for (Eigen::Index m = 0; m < 5 - j; ++m) expect += std::pow(c.decay(0, d), double(m));
      EXPECT_NEAR(grads.at(0)(j, d), expect, 1e-14);
    }
  EXPECT_NE(grads.at(1)(0, 0), 0.0);
}

TEST(FuseLatents, NoTemporalLinksMeansRawLatentsAlone) {
  DecoderConfig d = DecoderConfig::defaults_for(2);
  OccupancyConfig o;
  StrepModel m = init_strep_model(d, o, 1, /*temporal=*/false);
  std::mt19937_64 rng(1);
  LatentChain c = m.chain_with(make_latents(4, d.latent_dim, rng).raw);
  EXPECT_EQ(fuse_latents(c), c.raw);
  EXPECT_EQ(init_strep_model(d, o, 1, true).decay,
            RowMatrix::Constant(1, d.latent_dim, 0.5));
}

TEST(FuseLatents, DecayShapeIsChecked) {
  LatentChain c{RowMatrix::Zero(3, 4), RowMatrix::Zero(1, 3)};
  EXPECT_THROW(fuse_latents(c), UsageError);
}

TEST(Decoder, LatentDimensionDefaults) {
  EXPECT_EQ(DecoderConfig::defaults_for(2).latent_dim, 16);
  EXPECT_EQ(DecoderConfig::defaults_for(3).latent_dim, 24);
  EXPECT_EQ(DecoderConfig::defaults_for(2).point_widths, (std::vector<int>{64, 256, 1024}));
  EXPECT_EQ(DecoderConfig::defaults_for(2).head_widths, (std::vector<int>{512, 128}));
}

TEST(Decoder, InitIsDeterministicAndWithinBounds) {
  const DecoderConfig cfg = DecoderConfig::defaults_for(2);
  auto [d1, c1] = init_model(cfg, 16, 9);
  auto [d2, c2] = init_model(cfg, 16, 9);
  EXPECT_EQ(c1.raw, c2.raw);
  for (std::size_t i = 0; i < d1.point_stage.size(); ++i) {
    EXPECT_EQ(d1.point_stage[i].weight, d2.point_stage[i].weight);
    const double bound = std::sqrt(1.0 / double(d1.point_stage[i].fan_in()));
    EXPECT_LE(d1.point_stage[i].weight.cwiseAbs().maxCoeff(), bound);
    EXPECT_EQ(d1.point_stage[i].bias, RowMatrix::Zero(1, d1.point_stage[i].fan_out()));
  }
  EXPECT_EQ(c1.decay, RowMatrix::Constant(1, 16, 0.5));
  // Latents are N(0, 1) draws: loose moment check on 256 samples.
  EXPECT_NEAR(c1.raw.mean(), 0.0, 0.25);
  auto [d3, c3] = init_model(cfg, 16, 10);
  EXPECT_NE(c1.raw, c3.raw);
}

TEST(Decoder, ZeroHeadDecodesIdentity) {
  const DecoderConfig cfg = DecoderConfig::defaults_for(2);
  auto [dec, chain] = init_model(cfg, 4, 5);
  std::mt19937_64 rng(5);
  const PointSet frame(2, random_points(32, 2, rng));
  const Pose p = decode_pose(dec, frame, chain.raw.row(0));
  for (double v : p.params()) EXPECT_EQ(v, 0.0);
}

TEST(Decoder, PermutationInvariantWithUnitKernel) {
  for (int dim : {2, 3}) {
    auto [dec, chain] = init_model(live_head(dim), 1, 21);
    std::mt19937_64 rng(21);
    RowMatrix pts = random_points(40, dim, rng);
    const Pose a = decode_pose(dec, PointSet(dim, pts), chain.raw);
    std::vector<Eigen::Index> order(40);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    RowMatrix shuffled(40, dim);
    for (Eigen::Index i = 0; i < 40; ++i) shuffled.row(i) = pts.row(order[std::size_t(i)]);
    const Pose b = decode_pose(dec, PointSet(dim, shuffled), chain.raw);
    EXPECT_EQ(a.params(), b.params()) << "dim " << dim;
    EXPECT_NE(a.translation.norm(), 0.0);
  }
}

TEST(Decoder, SeededDecodeIsReproducible) {
  auto run = [] {
    auto [dec, chain] = init_model(live_head(2), 1, 42);
    std::mt19937_64 rng(42);
    return decode_pose(dec, PointSet(2, random_points(16, 2, rng)), chain.raw);
  };
  const Pose a = run(), b = run();
  EXPECT_TRUE(a.is_finite());
  EXPECT_EQ(a.params(), b.params());
}

TEST(Decoder, TranslationIsScaled) {
  DecoderConfig cfg = live_head(2);
  auto [dec, chain] = init_model(cfg, 1, 8);
  std::mt19937_64 rng(8);
  const PointSet frame(2, random_points(16, 2, rng));
  const Pose a = decode_pose(dec, frame, chain.raw);
  dec.config.trans_scale = 2.0 * cfg.trans_scale;
  const Pose b = decode_pose(dec, frame, chain.raw);
  EXPECT_NEAR(b.translation[0], 2.0 * a.translation[0], 1e-12);
  EXPECT_EQ(b.rotation[0], a.rotation[0]);
}

TEST(Decoder, RejectsMismatchedInputs) {
  auto [dec, chain] = init_model(DecoderConfig::defaults_for(2), 1, 1);
  std::mt19937_64 rng(1);
  EXPECT_THROW(decode_pose(dec, PointSet(3, random_points(4, 3, rng)), chain.raw),
               UsageError);
  EXPECT_THROW(decode_pose(dec, PointSet(2, random_points(4, 2, rng)), RowMatrix::Zero(1, 3)),
               UsageError);
  DecoderConfig bad = DecoderConfig::defaults_for(2);
  bad.kernel_width = 2;
  EXPECT_THROW(make_decoder(bad, rng), UsageError);
}

TEST(Decoder, DecodeAllUsesFusedLatents) {
  auto [dec, chain] = init_model(live_head(2), 3, 4);
  std::mt19937_64 rng(4);
  std::vector<PointSet> frames;
  for (int i = 0; i < 3; ++i) frames.emplace_back(2, random_points(12, 2, rng));
  const std::vector<Pose> poses = decode_all(dec, frames, chain);
  const RowMatrix fused = fuse_latents(chain);
  EXPECT_EQ(poses[2].params(), decode_pose(dec, frames[2], fused.row(2)).params());
  EXPECT_THROW(decode_all(dec, {frames[0]}, chain), UsageError);
}
