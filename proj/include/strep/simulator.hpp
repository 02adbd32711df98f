#pragma once

// Synthetic 2D LiDAR benchmark: occupancy-grid environments, random agent
// trajectories, and ray-cast scans with ground-truth poses.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "strep/errors.hpp"
#include "strep/geometry.hpp"

namespace strep {

inline constexpr const char* kGeneratorVersion = "strep-sim-1";

/// Binary occupancy raster. Cell (x, y) covers [x, x+1) x [y, y+1) in pixel
/// coordinates; x grows with the column, y with the row.
struct EnvironmentMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> cells;  // row-major, 1 = obstacle
  std::string name;

  EnvironmentMap() = default;
  EnvironmentMap(int w, int h, std::string n)
      : width(w), height(h), cells(std::size_t(w) * std::size_t(h), 0),
        name(std::move(n)) {}

  bool in_bounds(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  bool occupied(int x, int y) const {
    return !in_bounds(x, y) || cells[std::size_t(y) * width + x] != 0;
  }
  bool occupied_at(double x, double y) const {
    return occupied(int(std::floor(x)), int(std::floor(y)));
  }
  void set(int x, int y, bool occ) {
    if (in_bounds(x, y)) cells[std::size_t(y) * width + x] = occ ? 1 : 0;
  }

  // Fills [x0, x1) x [y0, y1).
  void fill_rect(int x0, int y0, int x1, int y1, bool occ = true) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(x, y, occ);
  }

  void close_boundary(int thickness = 2) {
    fill_rect(0, 0, width, thickness);
    fill_rect(0, height - thickness, width, height);
    fill_rect(0, 0, thickness, height);
    fill_rect(width - thickness, 0, width, height);
  }

  std::size_t free_cells() const {
    std::size_t n = 0;
    for (auto c : cells) n += c == 0;
    return n;
  }

  void validate() const {
    if (width < 3 || height < 3) throw UsageError("map too small");
    for (int x = 0; x < width; ++x)
      if (!occupied(x, 0) || !occupied(x, height - 1))
        throw UsageError("map boundary must be occupied");
    for (int y = 0; y < height; ++y)
      if (!occupied(0, y) || !occupied(width - 1, y))
        throw UsageError("map boundary must be occupied");
    if (free_cells() == 0) throw UsageError("map has no free cell");
  }

  bool operator==(const EnvironmentMap&) const = default;
};

// Rectangular loop corridor around a central block.
inline EnvironmentMap corridor_loop_map() {
  EnvironmentMap m(512, 512, "corridor_loop");
  m.close_boundary();
  m.fill_rect(130, 130, 382, 382);
  // Alcoves and pillars break the symmetry of the straight runs.
  m.fill_rect(130, 60, 150, 130, false);
  m.fill_rect(200, 382, 230, 420);
  m.fill_rect(382, 250, 430, 262);
  m.fill_rect(60, 300, 80, 320);
  m.fill_rect(250, 20, 262, 45);
  m.fill_rect(440, 440, 470, 452);
  return m;
}

// Two rooms joined by a doorway, with desks.
inline EnvironmentMap two_room_office_map() {
  EnvironmentMap m(512, 384, "two_room_office");
  m.close_boundary();
  m.fill_rect(254, 0, 260, 384);
  m.fill_rect(254, 160, 260, 224, false);
  m.fill_rect(60, 60, 140, 90);
  m.fill_rect(60, 260, 100, 320);
  m.fill_rect(180, 150, 200, 230);
  m.fill_rect(330, 50, 450, 70);
  m.fill_rect(320, 280, 360, 320);
  m.fill_rect(420, 180, 470, 220);
  return m;
}

// Open hall scattered with small obstacles at fixed pseudo-random places.
inline EnvironmentMap cluttered_hall_map() {
  EnvironmentMap m(512, 512, "cluttered_hall");
  m.close_boundary();
  std::mt19937 rng(20240611u);
  std::uniform_int_distribution<int> pos(40, 460);
  std::uniform_int_distribution<int> size(6, 18);
  for (int i = 0; i < 40; ++i) {
    const int x = pos(rng), y = pos(rng);
    m.fill_rect(x, y, x + size(rng), y + size(rng));
  }
  m.fill_rect(100, 240, 220, 248);
  m.fill_rect(300, 120, 308, 220);
  return m;
}

inline std::vector<EnvironmentMap> default_environments() {
  return {corridor_loop_map(), two_room_office_map(), cluttered_hall_map()};
}

struct TrajectorySpec {
  int num_frames = 16;
  double rot_range = 10.0 * std::numbers::pi / 180.0;  // per step, +-
  double trans_min = 0.0;
  double trans_max = 16.0;  // pixels per step
  int beams = 256;
  double fov = 2.0 * std::numbers::pi;
  double max_range = 400.0;
  double start_clearance = 20.0;
  double range_noise = 0.0;  // std-dev of Gaussian noise along the beam
  std::uint64_t seed = 0;

  void validate() const {
    if (num_frames < 2) throw UsageError("trajectory needs >= 2 frames");
    if (beams < 8) throw UsageError("beams must be >= 8");
    if (rot_range < 0.0 || trans_min < 0.0 || trans_max < trans_min)
      throw UsageError("invalid motion ranges");
    if (!(fov > 0.0) || !(max_range > 0.0))
      throw UsageError("fov and max_range must be positive");
  }
};

/// Ordered frames of one trajectory with optional ground truth.
struct SequenceDataset {
  int dim = 2;
  std::vector<PointSet> frames;
  std::optional<std::vector<Pose>> gt_poses;
  std::string env_name;
  std::uint64_t seed = 0;
  std::string generator_version = kGeneratorVersion;
  std::string units = "pixels";

  std::size_t size() const { return frames.size(); }
  bool has_gt() const { return gt_poses.has_value(); }

  void validate() const {
    check_dim(dim);
    if (frames.empty()) throw UsageError("dataset has no frames");
    for (const auto& f : frames) {
      if (f.dim != dim) throw UsageError("frame dimension differs from dataset");
      f.validate();
    }
    if (gt_poses) {
      if (gt_poses->size() != frames.size())
        throw UsageError("gt pose count != frame count");
      for (const auto& p : *gt_poses)
        if (p.dim != dim || !p.is_finite()) throw UsageError("invalid gt pose");
    }
  }
};

namespace detail {

inline bool has_clearance(const EnvironmentMap& env, double x, double y,
                          double radius) {
  const int r = int(std::ceil(radius));
  const int cx = int(std::floor(x)), cy = int(std::floor(y));
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy > radius * radius) continue;
      if (env.occupied(cx + dx, cy + dy)) return false;
    }
  return true;
}

// True when the segment between two points crosses only free cells.
inline bool segment_free(const EnvironmentMap& env, double x0, double y0,
                         double x1, double y1) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(1, int(std::ceil(len / 0.5)));
  for (int i = 0; i <= steps; ++i) {
    const double t = double(i) / steps;
    if (env.occupied_at(x0 + t * (x1 - x0), y0 + t * (y1 - y0))) return false;
  }
  return true;
}

}  // namespace detail

/// Random agent walk: a start with clearance from obstacles, then per step a
/// heading change and a forward move. Steps entering occupied or
/// out-of-bounds cells are redrawn.
inline std::vector<Pose> sample_trajectory(const EnvironmentMap& env,
                                           const TrajectorySpec& spec,
                                           std::mt19937_64& rng) {
  spec.validate();
  std::uniform_int_distribution<int> col(0, env.width - 1);
  std::uniform_int_distribution<int> row(0, env.height - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> heading(-std::numbers::pi,
                                                 std::numbers::pi);
  // Rejection sampling over all cells is uniform over the valid starts.
  auto draw_start = [&]() -> std::pair<int, int> {
    for (int tries = 0; tries < 1000000; ++tries) {
      const int x = col(rng), y = row(rng);
      if (!env.occupied(x, y) &&
          detail::has_clearance(env, x + 0.5, y + 0.5, spec.start_clearance))
        return {x, y};
    }
    throw GenerationError("no free cell with enough clearance in map '" +
                          env.name + "'");
  };
  for (int restart = 0; restart < 1000; ++restart) {
    const auto [sx, sy] = draw_start();
    std::vector<Pose> poses{Pose::planar(sx + 0.5, sy + 0.5, heading(rng))};
    bool ok = true;
    while (ok && int(poses.size()) < spec.num_frames) {
      const Pose& last = poses.back();
      ok = false;
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double dtheta = spec.rot_range * (2.0 * unit(rng) - 1.0);
        const double step =
            spec.trans_min + (spec.trans_max - spec.trans_min) * unit(rng);
        const double th = last.rotation[0] + dtheta;
        const double x = last.translation[0] + step * std::cos(th);
        const double y = last.translation[1] + step * std::sin(th);
        if (!detail::segment_free(env, last.translation[0], last.translation[1],
                                  x, y))
          continue;
        poses.push_back(Pose::planar(x, y, th));
        ok = true;
        break;
      }
    }
    if (ok) return poses;
  }
  throw GenerationError("no valid trajectory after 1000 restarts in map '" +
                        env.name + "'");
}

/// Casts evenly spaced beams around the pose heading, marching each at
/// 0.5 px until the first occupied cell. Hits are reported at that cell's
/// centre, in the sensor's local frame, ordered by beam angle. Beams without
/// a hit inside max_range are dropped.
inline PointSet raycast_scan(const EnvironmentMap& env, const Pose& pose,
                             const TrajectorySpec& spec,
                             std::mt19937_64* noise_rng = nullptr) {
  spec.validate();
  if (pose.dim != 2) throw UsageError("raycast_scan: pose must be 2D");
  const double ox = pose.translation[0], oy = pose.translation[1];
  if (env.occupied_at(ox, oy))
    throw UsageError("raycast_scan: sensor inside an obstacle");
  const Pose to_local = inverse(pose);
  const Eigen::Matrix2d r = to_local.rotation_matrix();
  std::normal_distribution<double> noise(0.0, spec.range_noise);

  std::vector<Eigen::Vector2d> hits;
  hits.reserve(std::size_t(spec.beams));
  const double step = 0.5;
  for (int b = 0; b < spec.beams; ++b) {
    const double angle =
        pose.rotation[0] - 0.5 * spec.fov + (b + 0.5) * spec.fov / spec.beams;
    const double dx = std::cos(angle), dy = std::sin(angle);
    for (double t = step; t <= spec.max_range; t += step) {
      const int cx = int(std::floor(ox + t * dx));
      const int cy = int(std::floor(oy + t * dy));
      if (!env.in_bounds(cx, cy)) break;
      if (env.occupied(cx, cy)) {
        Eigen::Vector2d hit(cx + 0.5, cy + 0.5);
        if (spec.range_noise > 0.0 && noise_rng)
          hit += noise(*noise_rng) * Eigen::Vector2d(dx, dy);
        hits.push_back(r * hit + to_local.translation);
        break;
      }
    }
  }
  if (hits.empty())
    throw GenerationError("degenerate frame: no beam hit anything");
  RowMatrix pts(Eigen::Index(hits.size()), 2);
  for (std::size_t i = 0; i < hits.size(); ++i)
    pts.row(Eigen::Index(i)) = hits[i].transpose();
  return PointSet(2, std::move(pts));
}

inline SequenceDataset simulate_sequence(const EnvironmentMap& env,
                                         const TrajectorySpec& spec) {
  std::mt19937_64 rng(spec.seed);
  SequenceDataset ds;
  ds.dim = 2;
  ds.env_name = env.name;
  ds.seed = spec.seed;
  std::vector<Pose> poses = sample_trajectory(env, spec, rng);
  for (const auto& p : poses) ds.frames.push_back(raycast_scan(env, p, spec, &rng));
  ds.gt_poses = std::move(poses);
  return ds;
}

// Seed of trajectory t in environment e for a benchmark seed.
inline std::uint64_t trajectory_seed(std::uint64_t seed, std::size_t env,
                                     std::size_t traj) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32),
                    std::uint32_t(env), std::uint32_t(traj)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (std::uint64_t(out[0]) << 32) | out[1];
}

/// Deterministic suite: counts[e] trajectories in envs[e].
inline std::vector<SequenceDataset> generate_benchmark(
    const std::vector<EnvironmentMap>& envs, const std::vector<int>& counts,
    TrajectorySpec spec, std::uint64_t seed) {
  if (envs.empty()) throw UsageError("generate_benchmark: no environments");
  if (counts.size() != envs.size())
    throw UsageError("generate_benchmark: one count per environment required");
  std::vector<SequenceDataset> out;
  for (std::size_t e = 0; e < envs.size(); ++e) {
    envs[e].validate();
    for (int t = 0; t < counts[e]; ++t) {
      spec.seed = trajectory_seed(seed, e, std::size_t(t));
      out.push_back(simulate_sequence(envs[e], spec));
    }
  }
  return out;
}

inline std::vector<SequenceDataset> generate_benchmark(const TrajectorySpec& spec,
                                                       std::uint64_t seed) {
  return generate_benchmark(default_environments(), {7, 7, 6}, spec, seed);
}

}  // namespace strep
