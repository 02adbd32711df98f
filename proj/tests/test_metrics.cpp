#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "strep/metrics.hpp"

using namespace strep;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<Pose> random_walk(int dim, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> step(-8.0, 8.0), turn(-0.3, 0.3);
  std::vector<Pose> out;
  Pose p = Pose::identity(dim);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) p.translation[d] += step(rng);
    for (int d = 0; d < p.rotation.size(); ++d) p.rotation[d] += turn(rng);
    out.push_back(p);
  }
  return out;
}

std::vector<PointSet> random_frames(int dim, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  std::vector<PointSet> out;
  for (int i = 0; i < n; ++i) {
    RowMatrix m(12, dim);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
    out.emplace_back(dim, m);
  }
  return out;
}

Pose random_rigid(int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> t(-100.0, 100.0), a(-kPi, kPi), pitch(-1.3, 1.3);
  if (dim == 2) return Pose::planar(t(rng), t(rng), a(rng));
  return Pose::spatial(Eigen::Vector3d(t(rng), t(rng), t(rng)), a(rng), pitch(rng), a(rng));
}

// Planar alignment RMS by scanning theta, then shrinking the bracket; for a
// fixed rotation the best translation is the centroid difference.
double brute_force_rms_2d(const std::vector<Pose>& est, const std::vector<Pose>& gt) {
  Eigen::Vector2d pc = Eigen::Vector2d::Zero(), qc = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    pc += est[i].translation;
    qc += gt[i].translation;
  }
  pc /= double(est.size());
  qc /= double(est.size());
  auto rms = [&](double theta) {
    const Eigen::Matrix2d r = rotation_2d(theta);
    double sq = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i)
      sq += (r * (est[i].translation - pc) - (gt[i].translation - qc)).squaredNorm();
    return std::sqrt(sq / double(est.size()));
  };
  double best = 0.0, best_val = rms(0.0);
  for (int k = 0; k < 7200; ++k) {
    const double th = -kPi + 2 * kPi * k / 7200.0;
    if (rms(th) < best_val) best_val = rms(th), best = th;
  }
  double lo = best - 2 * kPi / 7200.0, hi = best + 2 * kPi / 7200.0;
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
    if (rms(m1) < rms(m2))
      hi = m2;
    else
      lo = m1;
  }
  return rms(0.5 * (lo + hi));
}

}  // namespace

TEST(Align, IdenticalTrajectoriesGiveIdentity) {
  std::mt19937_64 rng(1);
  const auto gt = random_walk(2, 16, rng);
  const Pose a = align_trajectories(gt, gt);
  for (double v : a.params()) EXPECT_NEAR(v, 0.0, 1e-9);
  EXPECT_NEAR(ate(gt, gt), 0.0, 1e-9);
  EXPECT_NEAR(point_distance(gt, gt, random_frames(2, 16, rng)), 0.0, 1e-9);
}

TEST(Align, RecoversRigidMotion) {
  std::mt19937_64 rng(2);
  for (int dim : {2, 3}) {
    const auto gt = random_walk(dim, 16, rng);
    const Pose motion = random_rigid(dim, rng);
    const auto moved = apply_alignment(motion, gt);
    const Pose a = align_trajectories(moved, gt);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const Pose back = compose(a, moved[i]);
      EXPECT_LT((back.translation - gt[i].translation).norm(), 1e-9);
      EXPECT_LT((back.rotation_matrix() - gt[i].rotation_matrix()).norm(), 1e-9);
    }
  }
}

TEST(Align, ConstantOffsetIsRemoved) {
  std::mt19937_64 rng(3);
  const auto gt = random_walk(2, 16, rng);
  auto est = gt;
  for (auto& p : est) p.translation += Eigen::Vector2d(40.0, -3.0);
  EXPECT_NEAR(ate(est, gt), 0.0, 1e-9);
}

TEST(Align, DegenerateEstimateFitsTranslationOnly) {
  std::mt19937_64 rng(4);
  const auto gt = random_walk(2, 8, rng);
  const std::vector<Pose> est(8, Pose::planar(5.0, 5.0, 0.0));
  const Pose a = align_trajectories(est, gt);
  EXPECT_EQ(a.rotation[0], 0.0);
}

TEST(Align, MatchesBruteForceOracleUnderNoise) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto gt = random_walk(2, 16, rng);
    auto est = apply_alignment(random_rigid(2, rng), gt);
    for (auto& p : est) p.translation += Eigen::Vector2d(noise(rng), noise(rng));
    EXPECT_NEAR(ate(est, gt), brute_force_rms_2d(est, gt), 1e-6) << "trial " << trial;
  }
}

TEST(Ate, OneFrameOffByFourPixels) {
  std::mt19937_64 rng(6);
  const auto gt = random_walk(2, 16, rng);
  auto est = gt;
  est[7].translation[0] += 4.0;
  const double e = ate(est, gt);
  EXPECT_GT(e, 0.9);
  EXPECT_LT(e, 1.05);
  // Without re-alignment the error would be exactly 4 / sqrt(16).
  EXPECT_NEAR(ate(est, gt, AnchorMode::kFirst), 1.0, 1e-12);
}

TEST(Ate, PositiveForNonGaugeDeviation) {
  std::mt19937_64 rng(7);
  const auto gt = random_walk(2, 16, rng);
  auto est = gt;
  est[3].translation[1] += 1e-4;
  EXPECT_GT(ate(est, gt), 0.0);
}

TEST(Metrics, GaugeInvariance) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0.0, 2.0);
  for (int dim : {2, 3}) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto gt = random_walk(dim, 16, rng);
      const auto frames = random_frames(dim, 16, rng);
      auto est = gt;
      for (auto& p : est) {
        for (int d = 0; d < dim; ++d) p.translation[d] += noise(rng);
        p.rotation[0] += 0.05 * noise(rng);
      }
      const auto moved = apply_alignment(random_rigid(dim, rng), est);
      ASSERT_NEAR(ate(moved, gt), ate(est, gt), 1e-9);
      ASSERT_NEAR(point_distance(moved, gt, frames), point_distance(est, gt, frames), 1e-9);
    }
  }
}

TEST(PointDistance, HalfTurnAboutCentroid) {
  // Frame 1 is symmetric about its own origin, so a half turn keeps the
  // position and moves every point by twice its distance from the centre.
  RowMatrix pts(4, 2);
  pts << 1, 0, -1, 0, 0, 3, 0, -3;
  const std::vector<PointSet> frames = {PointSet(2, pts), PointSet(2, pts)};
  const std::vector<Pose> gt = {Pose::planar(0, 0, 0), Pose::planar(10, 0, 0)};
  const std::vector<Pose> est = {Pose::planar(0, 0, 0), Pose::planar(10, 0, kPi)};
  const double expect = (2 * 1 + 2 * 1 + 2 * 3 + 2 * 3) / 8.0;
  EXPECT_NEAR(point_distance(est, gt, frames), expect, 1e-12);
}

TEST(PointDistance, MatchesDirectRecomputation) {
  std::mt19937_64 rng(9);
  const auto gt = random_walk(2, 10, rng);
  const auto frames = random_frames(2, 10, rng);
  auto est = gt;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& p : est) p.translation += Eigen::Vector2d(noise(rng), noise(rng));
  const Pose a = align_trajectories(est, gt);
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (Eigen::Index k = 0; k < frames[i].size(); ++k) {
      const Eigen::VectorXd x = frames[i].points.row(k).transpose();
      total += (apply_pose(a, apply_pose(est[i], x)) - apply_pose(gt[i], x)).norm();
      ++count;
    }
  EXPECT_NEAR(point_distance(est, gt, frames), total / count, 1e-9);
  const EvalReport r = evaluate(est, gt, frames);
  EXPECT_NEAR(r.point_dist, total / count, 1e-9);
  EXPECT_EQ(r.frame_translation_errors.size(), 10u);
  EXPECT_EQ(r.frame_point_dists.size(), 10u);
  EXPECT_NEAR(r.ate, ate(est, gt), 1e-12);
}

TEST(Metrics, FirstAnchorMapsFirstPoseExactly) {
  std::mt19937_64 rng(10);
  const auto gt = random_walk(2, 6, rng);
  const auto est = apply_alignment(random_rigid(2, rng), gt);
  const Pose a = align_trajectories(est, gt, AnchorMode::kFirst);
  EXPECT_LT((compose(a, est[0]).translation - gt[0].translation).norm(), 1e-9);
  EXPECT_NEAR(ate(est, gt, AnchorMode::kFirst), 0.0, 1e-9);
  EXPECT_EQ(parse_anchor("first"), AnchorMode::kFirst);
  EXPECT_THROW(parse_anchor("best"), UsageError);
}

TEST(Metrics, LengthMismatchIsUsageError) {
  std::mt19937_64 rng(11);
  const auto gt = random_walk(2, 6, rng);
  EXPECT_THROW(ate({gt.begin(), gt.begin() + 5}, gt), UsageError);
  EXPECT_THROW(point_distance(gt, gt, random_frames(2, 5, rng)), UsageError);
}
