#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "strep/errors.hpp"

namespace strep {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Number of pose parameters: translation followed by rotation angles.
constexpr int pose_param_count(int dim) { return dim == 2 ? 3 : 6; }

inline void check_dim(int dim) {
  if (dim != 2 && dim != 3)
    throw UsageError("dimension must be 2 or 3, got " + std::to_string(dim));
}

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  if (r > std::numbers::pi) r -= two_pi;
  return r;
}

inline Eigen::Matrix2d rotation_2d(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

// R = Rz(yaw) * Ry(pitch) * Rx(roll).
inline Eigen::Matrix3d rotation_zyx(double yaw, double pitch, double roll) {
  const double cz = std::cos(yaw), sz = std::sin(yaw);
  const double cy = std::cos(pitch), sy = std::sin(pitch);
  const double cx = std::cos(roll), sx = std::sin(roll);
  Eigen::Matrix3d r;
  r << cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,  //
      sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,   //
      -sy, cy * sx, cy * cx;
  return r;
}

// Partial derivatives of rotation_zyx with respect to (yaw, pitch, roll).
inline std::array<Eigen::Matrix3d, 3> rotation_zyx_partials(double yaw,
                                                            double pitch,
                                                            double roll) {
  const double cz = std::cos(yaw), sz = std::sin(yaw);
  const double cy = std::cos(pitch), sy = std::sin(pitch);
  const double cx = std::cos(roll), sx = std::sin(roll);
  Eigen::Matrix3d d_yaw, d_pitch, d_roll;
  d_yaw << -sz * cy, -sz * sy * sx - cz * cx, -sz * sy * cx + cz * sx,  //
      cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,          //
      0.0, 0.0, 0.0;
  d_pitch << -cz * sy, cz * cy * sx, cz * cy * cx,  //
      -sz * sy, sz * cy * sx, sz * cy * cx,         //
      -cy, -sy * sx, -sy * cx;
  d_roll << 0.0, cz * sy * cx + sz * sx, -cz * sy * sx + sz * cx,  //
      0.0, sz * sy * cx - cz * sx, -sz * sy * sx - cz * cx,        //
      0.0, cy * cx, -cy * sx;
  return {d_yaw, d_pitch, d_roll};
}

/// Rigid sensor pose. In 2D the rotation is a single angle; in 3D it holds
/// Z-Y-X intrinsic Euler angles ordered (yaw, pitch, roll). Angles are
/// unconstrained reals.
struct Pose {
  int dim = 2;
  Eigen::VectorXd translation = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd rotation = Eigen::VectorXd::Zero(1);

  static Pose identity(int dim) {
    check_dim(dim);
    return Pose{dim, Eigen::VectorXd::Zero(dim),
                Eigen::VectorXd::Zero(dim == 2 ? 1 : 3)};
  }

  static Pose planar(double tx, double ty, double theta) {
    Pose p = identity(2);
    p.translation << tx, ty;
    p.rotation << theta;
    return p;
  }

  static Pose spatial(const Eigen::Vector3d& t, double yaw, double pitch,
                      double roll) {
    Pose p = identity(3);
    p.translation = t;
    p.rotation << yaw, pitch, roll;
    return p;
  }

  // Params are laid out as [translation..., rotation...].
  static Pose from_params(int dim, std::span<const double> params) {
    check_dim(dim);
    if (static_cast<int>(params.size()) != pose_param_count(dim))
      throw UsageError("pose parameter count mismatch");
    Pose p = identity(dim);
    for (int i = 0; i < dim; ++i) p.translation[i] = params[i];
    for (int i = 0; i < p.rotation.size(); ++i)
      p.rotation[i] = params[dim + i];
    return p;
  }

  std::vector<double> params() const {
    std::vector<double> out(translation.data(),
                            translation.data() + translation.size());
    out.insert(out.end(), rotation.data(), rotation.data() + rotation.size());
    return out;
  }

  Eigen::MatrixXd rotation_matrix() const {
    if (dim == 2) return rotation_2d(rotation[0]);
    return rotation_zyx(rotation[0], rotation[1], rotation[2]);
  }

  bool is_finite() const {
    return translation.allFinite() && rotation.allFinite();
  }

  // Same pose with every angle wrapped into (-pi, pi]. Used for reporting.
  Pose wrapped() const {
    Pose p = *this;
    for (int i = 0; i < p.rotation.size(); ++i)
      p.rotation[i] = wrap_angle(p.rotation[i]);
    return p;
  }
};

/// One frame's observation: n points in sensor-local coordinates plus the
/// sensor origin in the same frame.
struct PointSet {
  int dim = 2;
  RowMatrix points = RowMatrix(0, 2);
  Eigen::VectorXd sensor_origin = Eigen::VectorXd::Zero(2);

  PointSet() = default;
  PointSet(int d, RowMatrix pts)
      : dim(d), points(std::move(pts)), sensor_origin(Eigen::VectorXd::Zero(d)) {
    check_dim(d);
    if (points.cols() != d) throw UsageError("point matrix width != dim");
  }
  PointSet(int d, RowMatrix pts, Eigen::VectorXd origin)
      : dim(d), points(std::move(pts)), sensor_origin(std::move(origin)) {
    check_dim(d);
    if (points.cols() != d) throw UsageError("point matrix width != dim");
    if (sensor_origin.size() != d) throw UsageError("origin size != dim");
  }

  Eigen::Index size() const { return points.rows(); }

  void validate() const {
    check_dim(dim);
    if (points.rows() < 1) throw UsageError("point set is empty");
    if (points.cols() != dim) throw UsageError("point matrix width != dim");
    if (sensor_origin.size() != dim) throw UsageError("origin size != dim");
    if (!points.allFinite() || !sensor_origin.allFinite())
      throw UsageError("point set has non-finite coordinates");
  }
};

// Frames and origins brought into one world frame. Stacking all frames gives
// the global scene.
struct GlobalScene {
  int dim = 2;
  std::vector<PointSet> frames;

  RowMatrix stacked() const {
    Eigen::Index total = 0;
    for (const auto& f : frames) total += f.size();
    RowMatrix out(total, dim);
    Eigen::Index row = 0;
    for (const auto& f : frames) {
      out.middleRows(row, f.size()) = f.points;
      row += f.size();
    }
    return out;
  }
};

inline Eigen::VectorXd apply_pose(const Pose& pose, const Eigen::VectorXd& x) {
  if (pose.dim != x.size()) throw UsageError("apply_pose: dimension mismatch");
  return pose.rotation_matrix() * x + pose.translation;
}

inline PointSet apply_pose(const Pose& pose, const PointSet& pts) {
  if (pose.dim != pts.dim) throw UsageError("apply_pose: dimension mismatch");
  const Eigen::MatrixXd r = pose.rotation_matrix();
  PointSet out;
  out.dim = pts.dim;
  out.points = (pts.points * r.transpose()).rowwise() +
               pose.translation.transpose();
  out.sensor_origin = r * pts.sensor_origin + pose.translation;
  return out;
}

// Z-Y-X Euler angles of a rotation matrix. Pitch is taken in [-pi/2, pi/2].
inline Eigen::Vector3d euler_zyx(const Eigen::Matrix3d& r) {
  const double pitch =
      std::atan2(-r(2, 0), std::hypot(r(2, 1), r(2, 2)));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  const double roll = std::atan2(r(2, 1), r(2, 2));
  return {yaw, pitch, roll};
}

// apply_pose(compose(a, b), x) == apply_pose(a, apply_pose(b, x)).
inline Pose compose(const Pose& a, const Pose& b) {
  if (a.dim != b.dim) throw UsageError("compose: dimension mismatch");
  Pose out = Pose::identity(a.dim);
  const Eigen::MatrixXd ra = a.rotation_matrix();
  out.translation = ra * b.translation + a.translation;
  if (a.dim == 2) {
    out.rotation[0] = a.rotation[0] + b.rotation[0];
  } else {
    const Eigen::Matrix3d r = ra * b.rotation_matrix();
    out.rotation = euler_zyx(r);
  }
  return out;
}

inline Pose inverse(const Pose& p) {
  Pose out = Pose::identity(p.dim);
  const Eigen::MatrixXd r = p.rotation_matrix();
  out.translation = -(r.transpose() * p.translation);
  if (p.dim == 2) {
    out.rotation[0] = -p.rotation[0];
  } else {
    out.rotation = euler_zyx(r.transpose());
  }
  return out;
}

}  // namespace strep
