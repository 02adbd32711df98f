#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "strep/geometry.hpp"

namespace strep {

enum class NeighborSearch { kAuto, kBruteForce, kKdTree };

namespace detail {

// Shared by every search path so that distances compare bit-for-bit.
inline double squared_distance(const double* a, const double* b, int dim) {
  double d = 0.0;
  for (int c = 0; c < dim; ++c) {
    const double diff = a[c] - b[c];
    d += diff * diff;
  }
  return d;
}

}  // namespace detail

// Nearest neighbour by brute force. Ties resolve to the lowest index.
inline std::vector<Eigen::Index> nearest_brute_force(const RowMatrix& queries,
                                                     const RowMatrix& refs) {
  const int dim = static_cast<int>(queries.cols());
  std::vector<Eigen::Index> out(std::size_t(queries.rows()));
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index r = 0; r < refs.rows(); ++r) {
      const double d = detail::squared_distance(&queries(q, 0), &refs(r, 0), dim);
      if (d < best) {
        best = d;
        arg = r;
      }
    }
    out[std::size_t(q)] = arg;
  }
  return out;
}

/// Exact k-d tree over the rows of a point matrix. Queries return the same
/// index brute force would, including the lowest-index tie-break.
class KdTree {
 public:
  explicit KdTree(const RowMatrix& points, int leaf_size = 8)
      : points_(points), dim_(int(points.cols())), leaf_size_(leaf_size) {
    order_.resize(std::size_t(points.rows()));
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    if (!order_.empty()) build(0, order_.size());
  }

  Eigen::Index nearest(const double* q) const {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = std::numeric_limits<Eigen::Index>::max();
    if (!nodes_.empty()) search(0, q, best, arg);
    return arg;
  }

  std::vector<Eigen::Index> nearest_all(const RowMatrix& queries) const {
    std::vector<Eigen::Index> out(std::size_t(queries.rows()));
    for (Eigen::Index i = 0; i < queries.rows(); ++i)
      out[std::size_t(i)] = nearest(&queries(i, 0));
    return out;
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range in order_ (leaves only)
    int axis = -1;                   // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(std::size_t begin, std::size_t end) {
    const int id = int(nodes_.size());
    nodes_.push_back({});
    if (end - begin <= std::size_t(leaf_size_)) {
      nodes_[id].begin = begin;
      nodes_[id].end = end;
      return id;
    }
    int axis = 0;
    double widest = -1.0;
    for (int c = 0; c < dim_; ++c) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t i = begin; i < end; ++i) {
        lo = std::min(lo, points_(order_[i], c));
        hi = std::max(hi, points_(order_[i], c));
      }
      if (hi - lo > widest) {
        widest = hi - lo;
        axis = c;
      }
    }
    const std::size_t mid = begin + (end - begin - 1) / 2;
    std::nth_element(order_.begin() + std::ptrdiff_t(begin),
                     order_.begin() + std::ptrdiff_t(mid),
                     order_.begin() + std::ptrdiff_t(end),
                     [&](Eigen::Index a, Eigen::Index b) {
                       return points_(a, axis) < points_(b, axis);
                     });
    // Left holds [begin, mid] (coords <= split), right (mid, end) (>= split).
    const double split = points_(order_[mid], axis);
    const int left = build(begin, mid + 1);
    const int right = build(mid + 1, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(int id, const double* q, double& best, Eigen::Index& arg) const {
    const Node& n = nodes_[std::size_t(id)];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const Eigen::Index r = order_[i];
        const double d = detail::squared_distance(q, &points_(r, 0), dim_);
        if (d < best || (d == best && r < arg)) {
          best = d;
          arg = r;
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int near = diff <= 0.0 ? n.left : n.right;
    const int far = diff <= 0.0 ? n.right : n.left;
    search(near, q, best, arg);
    // Equal bounds may still hide a lower-index tie, so only prune on '>'.
    if (diff * diff <= best) search(far, q, best, arg);
  }

  const RowMatrix& points_;
  int dim_;
  int leaf_size_;
  std::vector<Eigen::Index> order_;
  std::vector<Node> nodes_;
};

// Index of the nearest ref for every query row.
inline std::vector<Eigen::Index> nearest_indices(
    const RowMatrix& queries, const RowMatrix& refs,
    NeighborSearch mode = NeighborSearch::kAuto) {
  if (queries.cols() != refs.cols())
    throw UsageError("nearest_indices: dimension mismatch");
  if (refs.rows() < 1) throw UsageError("nearest_indices: empty reference set");
  if (mode == NeighborSearch::kAuto)
    mode = refs.rows() > 64 ? NeighborSearch::kKdTree
                            : NeighborSearch::kBruteForce;
  if (mode == NeighborSearch::kBruteForce)
    return nearest_brute_force(queries, refs);
  KdTree tree(refs);
  return tree.nearest_all(queries);
}

}  // namespace strep
