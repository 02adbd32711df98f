#pragma once

// Trajectory evaluation. The losses are unchanged by one rigid motion
// applied to every pose, so estimates are aligned to ground truth first.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "strep/geometry.hpp"

namespace strep {

enum class AnchorMode {
  kFit,    // least-squares rigid fit of positions
  kFirst,  // map the first estimated pose onto the first ground-truth pose
};

inline AnchorMode parse_anchor(const std::string& s) {
  if (s == "fit") return AnchorMode::kFit;
  if (s == "first") return AnchorMode::kFirst;
  throw UsageError("anchor must be 'first' or 'fit', got '" + s + "'");
}

inline const char* anchor_name(AnchorMode m) {
  return m == AnchorMode::kFit ? "fit" : "first";
}

namespace detail {

inline void check_trajectories(const std::vector<Pose>& est,
                               const std::vector<Pose>& gt) {
  if (est.size() != gt.size())
    throw UsageError("trajectory length mismatch: " + std::to_string(est.size()) +
                     " vs " + std::to_string(gt.size()));
  if (est.empty()) throw UsageError("empty trajectory");
  for (std::size_t i = 0; i < est.size(); ++i)
    if (est[i].dim != est[0].dim || gt[i].dim != est[0].dim)
      throw UsageError("trajectory dimension mismatch");
}

inline Pose pose_from_rt(const Eigen::MatrixXd& r, const Eigen::VectorXd& t) {
  const int dim = int(t.size());
  Pose p = Pose::identity(dim);
  p.translation = t;
  if (dim == 2)
    p.rotation[0] = std::atan2(r(1, 0), r(0, 0));
  else
    p.rotation = euler_zyx(r);
  return p;
}

}  // namespace detail

/// Rigid transform A (no scale) minimising sum_i |A(est_i.t) - gt_i.t|^2,
/// found in closed form from the SVD of the cross-covariance. When all
/// estimated positions coincide only the translation is fitted.
inline Pose align_trajectories(const std::vector<Pose>& est,
                               const std::vector<Pose>& gt,
                               AnchorMode mode = AnchorMode::kFit) {
  detail::check_trajectories(est, gt);
  const int dim = est[0].dim;
  if (mode == AnchorMode::kFirst) return compose(gt[0], inverse(est[0]));
  if (est.size() < 2) throw UsageError("align_trajectories needs >= 2 poses");

  const std::size_t n = est.size();
  Eigen::MatrixXd p(dim, n), q(dim, n);
  for (std::size_t i = 0; i < n; ++i) {
    p.col(Eigen::Index(i)) = est[i].translation;
    q.col(Eigen::Index(i)) = gt[i].translation;
  }
  const Eigen::VectorXd pc = p.rowwise().mean();
  const Eigen::VectorXd qc = q.rowwise().mean();
  p.colwise() -= pc;
  q.colwise() -= qc;
  if (p.cwiseAbs().maxCoeff() < 1e-12)
    return detail::pose_from_rt(Eigen::MatrixXd::Identity(dim, dim), qc - pc);

  const Eigen::MatrixXd h = p * q.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::MatrixXd u = svd.matrixU(), v = svd.matrixV();
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(dim, dim);
  d(dim - 1, dim - 1) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Eigen::MatrixXd r = v * d * u.transpose();
  return detail::pose_from_rt(r, qc - r * pc);
}

struct EvalReport {
  double ate = 0.0;
  // Mean unsquared distance between corresponding points.
  double point_dist = 0.0;
  // Sum of squared distances between corresponding points.
  double point_sq_sum = 0.0;
  std::vector<double> frame_translation_errors;
  std::vector<double> frame_point_dists;
  Pose alignment = Pose::identity(2);
  AnchorMode anchor = AnchorMode::kFit;
};

inline std::vector<Pose> apply_alignment(const Pose& alignment,
                                         const std::vector<Pose>& est) {
  std::vector<Pose> out;
  out.reserve(est.size());
  for (const auto& p : est) out.push_back(compose(alignment, p));
  return out;
}

// RMSE of position errors after alignment.
inline double ate(const std::vector<Pose>& est, const std::vector<Pose>& gt,
                  AnchorMode mode = AnchorMode::kFit) {
  const Pose a = align_trajectories(est, gt, mode);
  double sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i)
    sq += (apply_pose(a, est[i].translation) - gt[i].translation).squaredNorm();
  return std::sqrt(sq / double(est.size()));
}

/// Mean distance between each local point placed by the aligned estimate and
/// by the ground truth pose of its frame.
inline double point_distance(const std::vector<Pose>& est,
                             const std::vector<Pose>& gt,
                             const std::vector<PointSet>& frames,
                             AnchorMode mode = AnchorMode::kFit) {
  detail::check_trajectories(est, gt);
  if (frames.size() != est.size())
    throw UsageError("point_distance: frame count mismatch");
  const Pose a = align_trajectories(est, gt, mode);
  double total = 0.0;
  Eigen::Index count = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const PointSet e = apply_pose(compose(a, est[i]), frames[i]);
    const PointSet g = apply_pose(gt[i], frames[i]);
    total += (e.points - g.points).rowwise().norm().sum();
    count += frames[i].size();
  }
  return count ? total / double(count) : 0.0;
}

inline EvalReport evaluate(const std::vector<Pose>& est,
                           const std::vector<Pose>& gt,
                           const std::vector<PointSet>& frames,
                           AnchorMode mode = AnchorMode::kFit) {
  detail::check_trajectories(est, gt);
  if (frames.size() != est.size())
    throw UsageError("evaluate: frame count mismatch");
  EvalReport r;
  r.anchor = mode;
  r.alignment = align_trajectories(est, gt, mode);
  double sq = 0.0, dist = 0.0;
  Eigen::Index count = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Pose aligned = compose(r.alignment, est[i]);
    const double e = (aligned.translation - gt[i].translation).norm();
    r.frame_translation_errors.push_back(e);
    sq += e * e;
    const PointSet ep = apply_pose(aligned, frames[i]);
    const PointSet gp = apply_pose(gt[i], frames[i]);
    const Eigen::VectorXd d = (ep.points - gp.points).rowwise().norm();
    r.frame_point_dists.push_back(d.size() ? d.mean() : 0.0);
    dist += d.sum();
    r.point_sq_sum += d.squaredNorm();
    count += d.size();
  }
  r.ate = std::sqrt(sq / double(est.size()));
  r.point_dist = count ? dist / double(count) : 0.0;
  return r;
}

}  // namespace strep
