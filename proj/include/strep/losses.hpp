#pragma once

// Pairwise Chamfer loss over neighbouring frames and the occupancy-based
// global loss with its free-space sampler.

#include <cmath>
#include <random>
#include <thread>
#include <utility>
#include <vector>

#include "strep/diffengine.hpp"
#include "strep/geometry.hpp"
#include "strep/kdtree.hpp"
#include "strep/mlp.hpp"

namespace strep {

// ---------------------------------------------------------------------------
// Chamfer

struct NearestPairs {
  std::vector<Eigen::Index> a_to_b;  // for each row of a, nearest row of b
  std::vector<Eigen::Index> b_to_a;
};

inline NearestPairs nearest_pairs(const RowMatrix& a, const RowMatrix& b,
                                  NeighborSearch mode = NeighborSearch::kAuto) {
  if (a.rows() < 1 || b.rows() < 1)
    throw UsageError("chamfer: point sets must be nonempty");
  if (a.cols() != b.cols()) throw UsageError("chamfer: dimension mismatch");
  return {nearest_indices(a, b, mode), nearest_indices(b, a, mode)};
}

// Sum over a of squared distance to the matched row of b.
inline double matched_sum(const RowMatrix& a, const RowMatrix& b,
                          const std::vector<Eigen::Index>& match) {
  double total = 0.0;
  const int dim = int(a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    total += detail::squared_distance(&a(i, 0), &b(match[std::size_t(i)], 0), dim);
  return total;
}

/// Sum-form Chamfer distance: squared nearest-neighbour distance from every
/// point of a to b, plus the same from b to a.
inline double chamfer(const RowMatrix& a, const RowMatrix& b,
                      NeighborSearch mode = NeighborSearch::kAuto) {
  const NearestPairs nn = nearest_pairs(a, b, mode);
  return matched_sum(a, b, nn.a_to_b) + matched_sum(b, a, nn.b_to_a);
}

inline double chamfer(const PointSet& a, const PointSet& b,
                      NeighborSearch mode = NeighborSearch::kAuto) {
  if (a.dim != b.dim) throw UsageError("chamfer: dimension mismatch");
  return chamfer(a.points, b.points, mode);
}

// Differentiable Chamfer with precomputed matches (held fixed in backward).
inline ad::Var chamfer(ad::Var a, ad::Var b, const NearestPairs& nn) {
  ad::Var ab = ad::sum(ad::square(ad::sub(a, ad::gather(b, nn.a_to_b))));
  ad::Var ba = ad::sum(ad::square(ad::sub(b, ad::gather(a, nn.b_to_a))));
  return ad::add(ab, ba);
}

inline ad::Var chamfer(ad::Var a, ad::Var b,
                       NeighborSearch mode = NeighborSearch::kAuto) {
  return chamfer(a, b, nearest_pairs(a.value(), b.value(), mode));
}

// Frames i and j are neighbours when 0 < |i - j| <= radius.
struct NeighborSpec {
  int radius = 1;

  void validate() const {
    if (radius < 1) throw UsageError("neighbor radius must be >= 1");
  }

  // Unordered pairs (i < j).
  std::vector<std::pair<std::size_t, std::size_t>> pairs(std::size_t k) const {
    validate();
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k && j <= i + std::size_t(radius); ++j)
        out.emplace_back(i, j);
    return out;
  }
};

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// handled by exactly one worker, so results written per index are
// independent of the thread count.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(std::size_t(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

/// Sum of Chamfer distances over ordered neighbour pairs. Each unordered
/// pair appears twice in that double sum, and Chamfer is symmetric, so the
/// unordered sum is doubled.
inline ad::Var local_loss(const std::vector<ad::Var>& frames,
                          const NeighborSpec& spec,
                          NeighborSearch mode = NeighborSearch::kAuto,
                          int threads = 1) {
  if (frames.size() < 2) throw UsageError("local_loss needs at least 2 frames");
  const auto pairs = spec.pairs(frames.size());
  std::vector<NearestPairs> matches(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t p) {
    matches[p] = nearest_pairs(frames[pairs[p].first].value(),
                               frames[pairs[p].second].value(), mode);
  });
  ad::Var total = chamfer(frames[pairs[0].first], frames[pairs[0].second],
                          matches[0]);
  for (std::size_t p = 1; p < pairs.size(); ++p)
    total = ad::add(total, chamfer(frames[pairs[p].first],
                                   frames[pairs[p].second], matches[p]));
  return ad::scale(total, 2.0);
}

inline double local_loss(const GlobalScene& scene, const NeighborSpec& spec,
                         NeighborSearch mode = NeighborSearch::kAuto) {
  if (scene.frames.size() < 2)
    throw UsageError("local_loss needs at least 2 frames");
  double total = 0.0;
  for (const auto& [i, j] : spec.pairs(scene.frames.size()))
    total += chamfer(scene.frames[i], scene.frames[j], mode);
  return 2.0 * total;
}

// ---------------------------------------------------------------------------
// Free-space sampling

// Fraction range for points between the sensor and a hit.
inline constexpr double kFreeLow = 0.05;
inline constexpr double kFreeHigh = 0.95;

/// For each point p emits `per_beam` points origin + r (p - origin), with r
/// stratified over (0.05, 0.95): the j-th sample falls in the j-th of
/// per_beam equal bins at position draw() within the bin. `draw` returns
/// values in [0, 1).
template <class UnitDraw>
RowMatrix sample_free_space(const RowMatrix& points,
                            const Eigen::VectorXd& origin, int per_beam,
                            UnitDraw&& draw) {
  if (per_beam < 1) throw UsageError("s_per_beam must be >= 1");
  if (origin.size() != points.cols())
    throw UsageError("sample_free_space: origin dimension mismatch");
  const double bin = (kFreeHigh - kFreeLow) / per_beam;
  RowMatrix out(points.rows() * per_beam, points.cols());
  Eigen::Index row = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::RowVectorXd ray = points.row(i) - origin.transpose();
    for (int j = 0; j < per_beam; ++j) {
      const double r = kFreeLow + bin * (j + draw());
      out.row(row++) = origin.transpose() + r * ray;
    }
  }
  return out;
}

inline PointSet sample_free_space(const PointSet& frame,
                                  const Eigen::VectorXd& origin, int per_beam,
                                  std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return PointSet(frame.dim,
                  sample_free_space(frame.points, origin, per_beam,
                                    [&] { return unit(rng); }),
                  origin);
}

// ---------------------------------------------------------------------------
// Occupancy network and global loss

struct OccupancyConfig {
  int dim = 2;
  std::vector<int> hidden = {64, 256, 512, 256, 128};
  Eigen::VectorXd world_extent = Eigen::VectorXd::Constant(2, 400.0);
};

/// Classifier over world coordinates returning one occupancy logit per
/// query. Queries are divided by world_extent on entry.
struct OccupancyNet {
  OccupancyConfig config;
  std::vector<Layer> layers;

  bool finite() const { return layers_finite(layers); }
};

inline OccupancyNet make_occupancy_net(const OccupancyConfig& cfg,
                                       std::mt19937_64& rng) {
  check_dim(cfg.dim);
  if (cfg.world_extent.size() != cfg.dim || !(cfg.world_extent.array() > 0).all())
    throw UsageError("world_extent must be positive with one entry per axis");
  std::vector<int> widths = {cfg.dim};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  return OccupancyNet{cfg, make_mlp(widths, rng)};
}

// All weights and biases zero: every query gets logit 0.
inline OccupancyNet zero_occupancy_net(const OccupancyConfig& cfg) {
  std::mt19937_64 rng(0);
  OccupancyNet net = make_occupancy_net(cfg, rng);
  for (auto& l : net.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return net;
}

struct BoundOccupancy {
  OccupancyConfig config;
  std::vector<BoundLayer> layers;
};

inline int occupancy_key_count(const OccupancyNet& net) {
  return 2 * static_cast<int>(net.layers.size());
}

inline BoundOccupancy bind_occupancy(ad::Graph& g, const OccupancyNet& net,
                                     int key_base, bool trainable) {
  return {net.config, bind_layers(g, net.layers, key_base, trainable)};
}

inline ad::Var occupancy_logits(const BoundOccupancy& net, ad::Var coords) {
  ad::Var x = ad::column_scale(coords, net.config.world_extent.cwiseInverse());
  return run_mlp(net.layers, x, /*relu_on_last=*/false);
}

// Occupied points and free-space samples of one frame, in world coordinates.
struct FrameQueries {
  ad::Var occupied;
  ad::Var free;
};

/// (1/K) sum_j [mean BCE(net(occupied_j), 1) + mean BCE(net(free_j), 0)].
inline ad::Var global_loss(const BoundOccupancy& net,
                           const std::vector<FrameQueries>& frames) {
  if (frames.empty()) throw UsageError("global_loss: scene is empty");
  ad::Var total;
  for (const auto& f : frames) {
    ad::Var occ = ad::mean(ad::sigmoid_bce(occupancy_logits(net, f.occupied), 1.0));
    ad::Var fre = ad::mean(ad::sigmoid_bce(occupancy_logits(net, f.free), 0.0));
    ad::Var term = ad::add(occ, fre);
    total = total.valid() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(frames.size()));
}

// Value-level global loss over a scene. Frame j draws its free-space samples
// from its own generator seeded with seed + j.
inline double global_loss(const GlobalScene& scene, const OccupancyNet& net,
                          int per_beam, std::uint64_t seed) {
  ad::Graph g;
  BoundOccupancy b = bind_occupancy(g, net, 0, false);
  std::vector<FrameQueries> queries;
  for (std::size_t j = 0; j < scene.frames.size(); ++j) {
    std::mt19937_64 rng(seed + j);
    const PointSet& f = scene.frames[j];
    const PointSet free = sample_free_space(f, f.sensor_origin, per_beam, rng);
    queries.push_back({g.constant(f.points), g.constant(free.points)});
  }
  return global_loss(b, queries).scalar();
}

inline double total_loss(const GlobalScene& scene, const NeighborSpec& spec,
                         const OccupancyNet& net, double lambda_global,
                         int per_beam, std::uint64_t seed) {
  if (lambda_global < 0.0) throw UsageError("lambda_global must be >= 0");
  const double local = local_loss(scene, spec);
  if (lambda_global == 0.0) return local;
  return local + lambda_global * global_loss(scene, net, per_beam, seed);
}

}  // namespace strep
