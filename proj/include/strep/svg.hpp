#pragma once

// Two-panel SVG: ground-truth vs estimated trajectory on the left, the
// stacked global scene (one colour per frame) on the right. Only the first
// two coordinates are drawn.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "strep/metrics.hpp"
#include "strep/simulator.hpp"

namespace strep {

namespace svg_detail {

struct Box {
  double x0 = std::numeric_limits<double>::infinity();
  double y0 = std::numeric_limits<double>::infinity();
  double x1 = -std::numeric_limits<double>::infinity();
  double y1 = -std::numeric_limits<double>::infinity();

  void add(double x, double y) {
    x0 = std::min(x0, x);
    y0 = std::min(y0, y);
    x1 = std::max(x1, x);
    y1 = std::max(y1, y);
  }
};

// Maps a data box into a square panel at (ox, oy) keeping the aspect ratio;
// the y axis points up.
struct Panel {
  Box box;
  double ox, oy, size, pad = 20.0;

  double scale() const {
    const double span = std::max({box.x1 - box.x0, box.y1 - box.y0, 1e-9});
    return (size - 2 * pad) / span;
  }
  double px(double x) const { return ox + pad + (x - box.x0) * scale(); }
  double py(double y) const { return oy + size - pad - (y - box.y0) * scale(); }
};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string frame_colour(std::size_t i, std::size_t n) {
  const int hue = n > 1 ? int(300.0 * double(i) / double(n - 1)) : 0;
  return "hsl(" + std::to_string(hue) + ",80%,45%)";
}

inline std::string polyline(const Panel& p, const std::vector<Pose>& poses,
                            const std::string& colour, const std::string& id) {
  std::string s = "<polyline id=\"" + id + "\" fill=\"none\" stroke=\"" + colour +
                  "\" stroke-width=\"2\" points=\"";
  for (const auto& pose : poses)
    s += num(p.px(pose.translation[0])) + "," + num(p.py(pose.translation[1])) + " ";
  s += "\"/>\n";
  return s;
}

}  // namespace svg_detail

/// Renders the overlay for `est` (aligned to ground truth when available).
inline std::string plot_svg(const SequenceDataset& ds, const std::vector<Pose>& est,
                            AnchorMode anchor = AnchorMode::kFit) {
  using namespace svg_detail;
  ds.validate();
  if (est.size() != ds.size())
    throw UsageError("plot: " + std::to_string(est.size()) + " poses for " +
                     std::to_string(ds.size()) + " frames");
  std::vector<Pose> shown = est;
  if (ds.has_gt()) shown = apply_alignment(align_trajectories(est, *ds.gt_poses, anchor), est);

  Panel traj{{}, 0.0, 0.0, 500.0};
  for (const auto& p : shown) traj.box.add(p.translation[0], p.translation[1]);
  if (ds.has_gt())
    for (const auto& p : *ds.gt_poses) traj.box.add(p.translation[0], p.translation[1]);

  std::vector<PointSet> world;
  Panel scene{{}, 500.0, 0.0, 500.0};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    world.push_back(apply_pose(shown[i], ds.frames[i]));
    const RowMatrix& pts = world.back().points;
    for (Eigen::Index r = 0; r < pts.rows(); ++r) scene.box.add(pts(r, 0), pts(r, 1));
  }

  std::string s =
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1000\" height=\"540\" "
      "viewBox=\"0 0 1000 540\">\n"
      "<title>" + escape(ds.env_name) + " seed " + std::to_string(ds.seed) + "</title>\n"
      "<rect width=\"1000\" height=\"540\" fill=\"white\"/>\n";
  s += "<g id=\"trajectory\">\n";
  if (ds.has_gt()) s += polyline(traj, *ds.gt_poses, "#1f77b4", "ground_truth");
  s += polyline(traj, shown, "#d62728", "estimate");
  for (std::size_t i = 0; i < shown.size(); ++i)
    s += "<circle cx=\"" + num(traj.px(shown[i].translation[0])) + "\" cy=\"" +
         num(traj.py(shown[i].translation[1])) + "\" r=\"3\" fill=\"" +
         frame_colour(i, shown.size()) + "\"/>\n";
  s += "</g>\n<g id=\"scene\">\n";
  for (std::size_t i = 0; i < world.size(); ++i) {
    s += "<g fill=\"" + frame_colour(i, world.size()) + "\">\n";
    const RowMatrix& pts = world[i].points;
    for (Eigen::Index r = 0; r < pts.rows(); ++r)
      s += "<circle cx=\"" + num(scene.px(pts(r, 0))) + "\" cy=\"" +
           num(scene.py(pts(r, 1))) + "\" r=\"1.2\"/>\n";
    s += "</g>\n";
  }
  s += "</g>\n";
  s += "<text x=\"20\" y=\"530\" font-family=\"sans-serif\" font-size=\"14\">"
       "trajectory: ground truth (blue), estimate (red)</text>\n";
  s += "<text x=\"520\" y=\"530\" font-family=\"sans-serif\" font-size=\"14\">"
       "stacked scene, coloured by frame</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace strep
