#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "strep/geometry.hpp"

using namespace strep;

namespace {

constexpr double kPi = std::numbers::pi;

Pose random_pose(int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> t(-50.0, 50.0), a(-kPi, kPi), pitch(-1.2, 1.2);
  if (dim == 2) return Pose::planar(t(rng), t(rng), a(rng));
  return Pose::spatial(Eigen::Vector3d(t(rng), t(rng), t(rng)), a(rng), pitch(rng), a(rng));
}

Eigen::VectorXd random_point(int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  Eigen::VectorXd x(dim);
  for (int i = 0; i < dim; ++i) x[i] = u(rng);
  return x;
}

}  // namespace

TEST(Pose, ParameterCountAndLayout) {
  EXPECT_EQ(pose_param_count(2), 3);
  EXPECT_EQ(pose_param_count(3), 6);
  const Pose p = Pose::planar(1.0, 2.0, 0.5);
  EXPECT_EQ(p.params(), (std::vector<double>{1.0, 2.0, 0.5}));
  const Pose q = Pose::from_params(2, p.params());
  EXPECT_EQ(q.params(), p.params());
  EXPECT_THROW(Pose::identity(4), UsageError);
}

TEST(ApplyPose, IdentityLeavesPointsUnchanged) {
  RowMatrix pts(3, 2);
  pts << 1, 2, -3, 4, 5.5, -6;
  const PointSet in(2, pts);
  const PointSet out = apply_pose(Pose::identity(2), in);
  EXPECT_EQ(out.points, in.points);
  EXPECT_EQ(out.sensor_origin, in.sensor_origin);
}

TEST(ApplyPose, QuarterTurn) {
  Eigen::VectorXd x(2);
  x << 1.0, 0.0;
  const Eigen::VectorXd y = apply_pose(Pose::planar(0.0, 0.0, kPi / 2), x);
  EXPECT_NEAR(y[0], 0.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0, 1e-12);
}

TEST(ApplyPose, HalfTurnPlusShift) {
  Eigen::VectorXd x(2);
  x << 1.0, 0.0;
  const Eigen::VectorXd y = apply_pose(Pose::planar(2.0, 3.0, kPi), x);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 3.0, 1e-12);
}

TEST(ApplyPose, TransformsSensorOriginAndKeepsOrder) {
  RowMatrix pts(2, 2);
  pts << 1, 0, 0, 1;
  const PointSet out = apply_pose(Pose::planar(5.0, -1.0, 0.0), PointSet(2, pts));
  EXPECT_DOUBLE_EQ(out.sensor_origin[0], 5.0);
  EXPECT_DOUBLE_EQ(out.sensor_origin[1], -1.0);
  EXPECT_DOUBLE_EQ(out.points(0, 0), 6.0);
  EXPECT_DOUBLE_EQ(out.points(1, 1), 0.0);
}

TEST(ApplyPose, DimensionMismatchIsUsageError) {
  RowMatrix pts(1, 3);
  pts << 1, 2, 3;
  EXPECT_THROW(apply_pose(Pose::identity(2), PointSet(3, pts)), UsageError);
}

TEST(Compose, IdentityAndInverse) {
  const Pose p = Pose::planar(3.0, -2.0, 0.7);
  const Pose c = compose(p, Pose::identity(2));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(c.params()[i], p.params()[i], 1e-15);
  const Pose e = compose(p, inverse(p));
  for (double v : e.params()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Compose, PlanarAnglesAdd) {
  const Pose c = compose(Pose::planar(0, 0, kPi / 4), Pose::planar(0, 0, kPi / 4));
  EXPECT_NEAR(c.rotation[0], kPi / 2, 1e-15);
  EXPECT_NEAR(c.translation.norm(), 0.0, 1e-15);
}

TEST(Inverse, SimpleCases) {
  const Pose id = inverse(Pose::identity(2));
  for (double v : id.params()) EXPECT_NEAR(v, 0.0, 1e-15);
  const Pose q = inverse(Pose::planar(1.0, 0.0, 0.0));
  EXPECT_NEAR(q.translation[0], -1.0, 1e-15);
  EXPECT_NEAR(q.translation[1], 0.0, 1e-15);
  EXPECT_NEAR(q.rotation[0], 0.0, 1e-15);
}

TEST(Inverse, RoundTripOnRandomPoses) {
  std::mt19937_64 rng(11);
  for (int dim : {2, 3}) {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Pose p = random_pose(dim, rng);
      const Eigen::VectorXd x = random_point(dim, rng);
      worst = std::max(worst, (apply_pose(inverse(p), apply_pose(p, x)) - x).norm());
    }
    EXPECT_LT(worst, 1e-9) << "dim " << dim;
  }
}

// Geometry laws over 1000 random samples per dimension.
TEST(GeometryLaws, RigidityOrthonormalityRoundTripsAssociativity) {
  std::mt19937_64 rng(2024);
  for (int dim : {2, 3}) {
    for (int i = 0; i < 1000; ++i) {
      const Pose a = random_pose(dim, rng), b = random_pose(dim, rng), c = random_pose(dim, rng);
      const Eigen::VectorXd x = random_point(dim, rng), y = random_point(dim, rng);

      const double d0 = (x - y).norm();
      const double d1 = (apply_pose(a, x) - apply_pose(a, y)).norm();
      ASSERT_NEAR(d0, d1, 1e-9);

      const Eigen::MatrixXd r = a.rotation_matrix();
      ASSERT_LT((r.transpose() * r - Eigen::MatrixXd::Identity(dim, dim)).cwiseAbs().maxCoeff(),
                1e-9);
      ASSERT_NEAR(r.determinant(), 1.0, 1e-9);

      const Eigen::VectorXd via = apply_pose(a, apply_pose(b, x));
      ASSERT_LT((apply_pose(compose(a, b), x) - via).norm(), 1e-9);

      const Pose ab_c = compose(compose(a, b), c), a_bc = compose(a, compose(b, c));
      ASSERT_LT((apply_pose(ab_c, x) - apply_pose(a_bc, x)).norm(), 1e-9);

      ASSERT_LT((apply_pose(compose(inverse(a), a), x) - x).norm(), 1e-9);
    }
  }
}

TEST(WrapAngle, IntoHalfOpenInterval) {
  EXPECT_NEAR(wrap_angle(3 * kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(-kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(0.25), 0.25, 1e-15);
  const Pose w = Pose::planar(0, 0, 5 * kPi / 2).wrapped();
  EXPECT_NEAR(w.rotation[0], kPi / 2, 1e-12);
}

TEST(PointSet, ValidationRejectsEmptyAndNonFinite) {
  EXPECT_THROW(PointSet(2, RowMatrix(0, 2)).validate(), UsageError);
  RowMatrix bad(1, 2);
  bad << 1.0, std::nan("");
  EXPECT_THROW(PointSet(2, bad).validate(), UsageError);
}

TEST(GlobalScene, StackedConcatenatesFrames) {
  RowMatrix a(2, 2), b(1, 2);
  a << 0, 0, 1, 1;
  b << 2, 2;
  GlobalScene scene{2, {PointSet(2, a), PointSet(2, b)}};
  const RowMatrix s = scene.stacked();
  ASSERT_EQ(s.rows(), 3);
  EXPECT_DOUBLE_EQ(s(2, 0), 2.0);
}
