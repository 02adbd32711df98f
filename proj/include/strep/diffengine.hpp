#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Graph is a tape: nodes are appended in evaluation order, so construction
// order is already topological and backward() walks it in reverse. Rows are
// the point axis, columns the feature axis. The tape is rebuilt every
// iteration; parameter values are copied in when they are registered.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "strep/errors.hpp"
#include "strep/geometry.hpp"

namespace strep::ad {

enum class Op {
  kConstant,
  kParameter,
  kLinear,
  kRelu,
  kSin,
  kCos,
  kConcat,
  kMaxOverPoints,
  kAdd,
  kSub,
  kMul,
  kSquare,
  kSum,
  kMean,
  kSigmoidBce,
  kGather,
  kScale,
  kColumnScale,
  kSliceCols,
  kTransform,
  kUnfold,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kLinear: return "linear";
    case Op::kRelu: return "relu";
    case Op::kSin: return "sin";
    case Op::kCos: return "cos";
    case Op::kConcat: return "concat";
    case Op::kMaxOverPoints: return "max_over_points";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSigmoidBce: return "sigmoid_bce";
    case Op::kGather: return "gather";
    case Op::kScale: return "scale";
    case Op::kColumnScale: return "column_scale";
    case Op::kSliceCols: return "slice_cols";
    case Op::kTransform: return "transform";
    case Op::kUnfold: return "unfold";
  }
  return "unknown";
}

struct Node {
  Op op = Op::kConstant;
  RowMatrix value;
  RowMatrix adjoint;  // allocated lazily during backward
  std::vector<int> parents;
  bool requires_grad = false;
  int param_key = -1;
  // Op-specific payload: gather rows, argmax rows, labels, factors, ...
  std::vector<Eigen::Index> indices;
  RowMatrix aux;
  double scalar = 0.0;
  Eigen::Index start = 0;
};

class Graph;

// Lightweight handle to a node in a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const RowMatrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Gradients of a scalar root with respect to every registered parameter.
class Gradients {
 public:
  bool contains(int key) const { return by_key_.count(key) > 0; }
  const RowMatrix& at(int key) const {
    auto it = by_key_.find(key);
    if (it == by_key_.end())
      throw UsageError("no gradient for parameter key " + std::to_string(key));
    return it->second;
  }
  const std::map<int, RowMatrix>& all() const { return by_key_; }
  std::map<int, RowMatrix>& all() { return by_key_; }

 private:
  std::map<int, RowMatrix> by_key_;
};

class Graph {
 public:
  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(RowMatrix value) {
    check_finite(value, Op::kConstant);
    Node n;
    n.op = Op::kConstant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var constant_scalar(double v) {
    RowMatrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  // Registers a trainable leaf. Each key may be registered once per graph.
  Var parameter(RowMatrix value, int key) {
    check_finite(value, Op::kParameter);
    if (param_nodes_.count(key))
      throw UsageError("parameter key registered twice: " +
                       std::to_string(key));
    Node n;
    n.op = Op::kParameter;
    n.value = std::move(value);
    n.requires_grad = true;
    n.param_key = key;
    Var v = push(std::move(n));
    param_nodes_[key] = v.id();
    return v;
  }

  const Node& node(int id) const { return nodes_.at(id); }
  Node& node(int id) { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  // Appends an op node. Parents must already belong to this graph.
  Var push(Node n) {
    for (int p : n.parents) {
      if (p < 0 || p >= static_cast<int>(nodes_.size()))
        throw UsageError("parent is not part of this graph");
      if (nodes_[p].requires_grad) n.requires_grad = true;
    }
    if (n.op != Op::kConstant && n.op != Op::kParameter)
      check_finite(n.value, n.op);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Gradients backward(Var root);

 private:
  static void check_finite(const RowMatrix& m, Op op) {
    if (!m.allFinite())
      throw NumericError(std::string("non-finite value produced by op '") +
                         op_name(op) + "'");
  }

  RowMatrix& adjoint_of(int id) {
    Node& n = nodes_[id];
    if (n.adjoint.size() == 0)
      n.adjoint = RowMatrix::Zero(n.value.rows(), n.value.cols());
    return n.adjoint;
  }

  void backprop_node(int id);

  std::vector<Node> nodes_;
  std::map<int, int> param_nodes_;
};

inline const RowMatrix& Var::value() const {
  return graph_->node(id_).value;
}

inline double Var::scalar() const {
  const RowMatrix& v = value();
  if (v.size() != 1) throw UsageError("value is not a scalar");
  return v(0, 0);
}

namespace detail {

inline Graph& same_graph(Var a, Var b) {
  if (!a.valid() || a.graph() != b.graph())
    throw UsageError("operands belong to different graphs");
  return *a.graph();
}

inline std::string shape_str(const RowMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw UsageError(std::string(op) + ": shape mismatch " +
                     shape_str(a.value()) + " vs " + shape_str(b.value()));
}

// Reflective index into [0, n).
inline Eigen::Index reflect(Eigen::Index i, Eigen::Index n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward primitives

// y = x W + b, with W stored in x out and b as a 1 x out row.
inline Var linear(Var weight, Var bias, Var x) {
  Graph& g = detail::same_graph(weight, x);
  detail::same_graph(weight, bias);
  if (x.cols() != weight.rows())
    throw UsageError("linear: input width " + std::to_string(x.cols()) +
                     " != weight rows " + std::to_string(weight.rows()));
  if (bias.rows() != 1 || bias.cols() != weight.cols())
    throw UsageError("linear: bias must be 1x" +
                     std::to_string(weight.cols()));
  Node n;
  n.op = Op::kLinear;
  n.value.noalias() = x.value() * weight.value();
  n.value.rowwise() += bias.value().row(0);
  n.parents = {weight.id(), bias.id(), x.id()};
  return g.push(std::move(n));
}

inline Var relu(Var x) {
  Node n;
  n.op = Op::kRelu;
  n.value = x.value().cwiseMax(0.0);
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

inline Var sin(Var x) {
  Node n;
  n.op = Op::kSin;
  n.value = x.value().array().sin().matrix();
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

inline Var cos(Var x) {
  Node n;
  n.op = Op::kCos;
  n.value = x.value().array().cos().matrix();
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

// Column-wise concatenation. A single-row operand is repeated over the rows
// of the other (the only broadcast the engine supports).
inline Var concat(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Eigen::Index rows = std::max(a.rows(), b.rows());
  if ((a.rows() != rows && a.rows() != 1) ||
      (b.rows() != rows && b.rows() != 1))
    throw UsageError("concat: row mismatch " + detail::shape_str(a.value()) +
                     " vs " + detail::shape_str(b.value()));
  Node n;
  n.op = Op::kConcat;
  n.value.resize(rows, a.cols() + b.cols());
  if (a.rows() == rows)
    n.value.leftCols(a.cols()) = a.value();
  else
    n.value.leftCols(a.cols()) = a.value().replicate(rows, 1);
  if (b.rows() == rows)
    n.value.rightCols(b.cols()) = b.value();
  else
    n.value.rightCols(b.cols()) = b.value().replicate(rows, 1);
  n.parents = {a.id(), b.id()};
  return g.push(std::move(n));
}

// Max over the point (row) axis. Ties go to the lowest row index.
inline Var max_over_points(Var x) {
  const RowMatrix& v = x.value();
  if (v.rows() < 1) throw UsageError("max_over_points: no points");
  Node n;
  n.op = Op::kMaxOverPoints;
  n.value = v.row(0);
  n.indices.assign(v.cols(), 0);
  for (Eigen::Index r = 1; r < v.rows(); ++r) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      if (v(r, c) > n.value(0, c)) {
        n.value(0, c) = v(r, c);
        n.indices[c] = r;
      }
    }
  }
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  detail::require_same_shape(a, b, "add");
  Node n;
  n.op = Op::kAdd;
  n.value = a.value() + b.value();
  n.parents = {a.id(), b.id()};
  return g.push(std::move(n));
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  detail::require_same_shape(a, b, "sub");
  Node n;
  n.op = Op::kSub;
  n.value = a.value() - b.value();
  n.parents = {a.id(), b.id()};
  return g.push(std::move(n));
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  detail::require_same_shape(a, b, "mul");
  Node n;
  n.op = Op::kMul;
  n.value = a.value().cwiseProduct(b.value());
  n.parents = {a.id(), b.id()};
  return g.push(std::move(n));
}

inline Var square(Var x) {
  Node n;
  n.op = Op::kSquare;
  n.value = x.value().array().square().matrix();
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

inline Var sum(Var x) {
  Node n;
  n.op = Op::kSum;
  n.value.resize(1, 1);
  n.value(0, 0) = x.value().sum();
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

inline Var mean(Var x) {
  if (x.value().size() == 0) throw UsageError("mean: empty input");
  Node n;
  n.op = Op::kMean;
  n.value.resize(1, 1);
  n.value(0, 0) = x.value().mean();
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

// Elementwise binary cross entropy of sigmoid(logit) against labels in
// {0, 1}, evaluated as max(x,0) - x*y + log1p(exp(-|x|)).
inline Var sigmoid_bce(Var logits, const RowMatrix& labels) {
  const RowMatrix& x = logits.value();
  if (labels.rows() != x.rows() || labels.cols() != x.cols())
    throw UsageError("sigmoid_bce: label shape mismatch");
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const double y = labels.data()[i];
    if (y != 0.0 && y != 1.0)
      throw UsageError("sigmoid_bce: labels must be 0 or 1");
  }
  Node n;
  n.op = Op::kSigmoidBce;
  n.value.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    n.value.data()[i] = std::max(v, 0.0) - v * labels.data()[i] +
                        std::log1p(std::exp(-std::abs(v)));
  }
  n.aux = labels;
  n.parents = {logits.id()};
  return logits.graph()->push(std::move(n));
}

inline Var sigmoid_bce(Var logits, double label) {
  return sigmoid_bce(
      logits, RowMatrix::Constant(logits.rows(), logits.cols(), label));
}

// Selects rows of x. Repeated indices are allowed; gradients scatter-add.
inline Var gather(Var x, std::vector<Eigen::Index> rows) {
  const RowMatrix& v = x.value();
  Node n;
  n.op = Op::kGather;
  n.value.resize(static_cast<Eigen::Index>(rows.size()), v.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= v.rows())
      throw UsageError("gather: row index out of range");
    n.value.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
  }
  n.indices = std::move(rows);
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

inline Var scale(Var x, double factor) {
  Node n;
  n.op = Op::kScale;
  n.value = x.value() * factor;
  n.scalar = factor;
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

// Multiplies column c by factors[c].
inline Var column_scale(Var x, const Eigen::VectorXd& factors) {
  if (factors.size() != x.cols())
    throw UsageError("column_scale: factor count != columns");
  Node n;
  n.op = Op::kColumnScale;
  n.value = x.value() * factors.asDiagonal();
  n.aux = factors.transpose();
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

inline Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 1 || start + count > x.cols())
    throw UsageError("slice_cols: range out of bounds");
  Node n;
  n.op = Op::kSliceCols;
  n.value = x.value().middleCols(start, count);
  n.start = start;
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

// Rigid transform of n x dim points by a 1 x P pose row laid out as
// [translation, rotation]; see Pose::from_params.
inline Var transform(Var pose, Var points) {
  Graph& g = detail::same_graph(pose, points);
  const Eigen::Index dim = points.cols();
  if (dim != 2 && dim != 3) throw UsageError("transform: points must be 2D/3D");
  if (pose.rows() != 1 || pose.cols() != pose_param_count(int(dim)))
    throw UsageError("transform: pose must be 1x" +
                     std::to_string(pose_param_count(int(dim))));
  const RowMatrix& p = pose.value();
  const Pose ps = Pose::from_params(
      int(dim), std::span<const double>(p.data(), std::size_t(p.cols())));
  Node n;
  n.op = Op::kTransform;
  n.value = points.value() * ps.rotation_matrix().transpose();
  n.value.rowwise() += ps.translation.transpose();
  n.parents = {pose.id(), points.id()};
  return g.push(std::move(n));
}

// Stacks each row with its neighbours along the row axis (reflective
// padding), producing n x (width * cols). Used for 1D convolution over the
// scan ordering; width must be odd.
inline Var unfold(Var x, int width) {
  if (width < 1 || width % 2 == 0)
    throw UsageError("unfold: width must be a positive odd integer");
  const RowMatrix& v = x.value();
  const Eigen::Index rows = v.rows(), cols = v.cols();
  const int half = width / 2;
  Node n;
  n.op = Op::kUnfold;
  n.value.resize(rows, cols * width);
  n.indices.resize(std::size_t(rows * width));
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (int j = 0; j < width; ++j) {
      const Eigen::Index src = detail::reflect(r + j - half, rows);
      n.indices[std::size_t(r * width + j)] = src;
      n.value.block(r, j * cols, 1, cols) = v.row(src);
    }
  }
  n.scalar = width;
  n.parents = {x.id()};
  return x.graph()->push(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward

inline void Graph::backprop_node(int id) {
  // Parents always precede id, so n and dy stay valid while parents update.
  Node& n = nodes_[id];
  const RowMatrix& dy = n.adjoint;
  auto needs = [&](int k) { return nodes_[n.parents[k]].requires_grad; };
  auto val = [&](int k) -> const RowMatrix& {
    return nodes_[n.parents[k]].value;
  };

  switch (n.op) {
    case Op::kConstant:
    case Op::kParameter:
      break;
    case Op::kLinear: {
      if (needs(0)) adjoint_of(n.parents[0]).noalias() += val(2).transpose() * dy;
      if (needs(1)) adjoint_of(n.parents[1]) += dy.colwise().sum();
      if (needs(2)) adjoint_of(n.parents[2]).noalias() += dy * val(0).transpose();
      break;
    }
    case Op::kRelu: {
      if (needs(0)) {
        const RowMatrix& x = val(0);
        RowMatrix& dx = adjoint_of(n.parents[0]);
        for (Eigen::Index i = 0; i < x.size(); ++i)
          if (x.data()[i] > 0.0) dx.data()[i] += dy.data()[i];
      }
      break;
    }
    case Op::kSin:
      if (needs(0))
        adjoint_of(n.parents[0]) +=
            dy.cwiseProduct(val(0).array().cos().matrix());
      break;
    case Op::kCos:
      if (needs(0))
        adjoint_of(n.parents[0]) -=
            dy.cwiseProduct(val(0).array().sin().matrix());
      break;
    case Op::kConcat: {
      const Eigen::Index ca = val(0).cols();
      const Eigen::Index cb = val(1).cols();
      for (int k = 0; k < 2; ++k) {
        if (!needs(k)) continue;
        const auto block = k == 0 ? dy.leftCols(ca) : dy.rightCols(cb);
        if (val(k).rows() == dy.rows())
          adjoint_of(n.parents[k]) += block;
        else
          adjoint_of(n.parents[k]) += block.colwise().sum();
      }
      break;
    }
    case Op::kMaxOverPoints: {
      if (needs(0)) {
        RowMatrix& dx = adjoint_of(n.parents[0]);
        for (Eigen::Index c = 0; c < dy.cols(); ++c)
          dx(n.indices[std::size_t(c)], c) += dy(0, c);
      }
      break;
    }
    case Op::kAdd:
      if (needs(0)) adjoint_of(n.parents[0]) += dy;
      if (needs(1)) adjoint_of(n.parents[1]) += dy;
      break;
    case Op::kSub:
      if (needs(0)) adjoint_of(n.parents[0]) += dy;
      if (needs(1)) adjoint_of(n.parents[1]) -= dy;
      break;
    case Op::kMul:
      if (needs(0)) adjoint_of(n.parents[0]) += dy.cwiseProduct(val(1));
      if (needs(1)) adjoint_of(n.parents[1]) += dy.cwiseProduct(val(0));
      break;
    case Op::kSquare:
      if (needs(0)) adjoint_of(n.parents[0]) += 2.0 * dy.cwiseProduct(val(0));
      break;
    case Op::kSum:
      if (needs(0)) adjoint_of(n.parents[0]).array() += dy(0, 0);
      break;
    case Op::kMean:
      if (needs(0))
        adjoint_of(n.parents[0]).array() +=
            dy(0, 0) / static_cast<double>(val(0).size());
      break;
    case Op::kSigmoidBce: {
      if (needs(0)) {
        const RowMatrix& x = val(0);
        RowMatrix& dx = adjoint_of(n.parents[0]);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          const double v = x.data()[i];
          // Stable logistic: never exponentiates a positive argument.
          const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                      : std::exp(v) / (1.0 + std::exp(v));
          dx.data()[i] += dy.data()[i] * (sig - n.aux.data()[i]);
        }
      }
      break;
    }
    case Op::kGather: {
      if (needs(0)) {
        RowMatrix& dx = adjoint_of(n.parents[0]);
        for (std::size_t i = 0; i < n.indices.size(); ++i)
          dx.row(n.indices[i]) += dy.row(static_cast<Eigen::Index>(i));
      }
      break;
    }
    case Op::kScale:
      if (needs(0)) adjoint_of(n.parents[0]) += dy * n.scalar;
      break;
    case Op::kColumnScale:
      if (needs(0))
        adjoint_of(n.parents[0]) +=
            dy * n.aux.row(0).transpose().asDiagonal();
      break;
    case Op::kSliceCols:
      if (needs(0))
        adjoint_of(n.parents[0]).middleCols(n.start, dy.cols()) += dy;
      break;
    case Op::kTransform: {
      const RowMatrix& p = val(0);
      const RowMatrix& pts = val(1);
      const Eigen::Index dim = pts.cols();
      const Pose ps = Pose::from_params(
          int(dim), std::span<const double>(p.data(), std::size_t(p.cols())));
      if (needs(1))
        adjoint_of(n.parents[1]).noalias() += dy * ps.rotation_matrix();
      if (needs(0)) {
        RowMatrix& dp = adjoint_of(n.parents[0]);
        dp.leftCols(dim) += dy.colwise().sum();
        // d(out_i)/d(angle) = dR/dangle * p_i; contract with dy_i.
        const Eigen::MatrixXd m = dy.transpose() * pts;  // dim x dim
        if (dim == 2) {
          const double th = ps.rotation[0];
          Eigen::Matrix2d dr;
          dr << -std::sin(th), -std::cos(th), std::cos(th), -std::sin(th);
          dp(0, 2) += (dr.array() * m.array()).sum();
        } else {
          const auto partials = rotation_zyx_partials(
              ps.rotation[0], ps.rotation[1], ps.rotation[2]);
          for (int a = 0; a < 3; ++a)
            dp(0, 3 + a) += (partials[a].array() * m.array()).sum();
        }
      }
      break;
    }
    case Op::kUnfold: {
      if (needs(0)) {
        RowMatrix& dx = adjoint_of(n.parents[0]);
        const int width = static_cast<int>(n.scalar);
        const Eigen::Index cols = dx.cols();
        for (Eigen::Index r = 0; r < dy.rows(); ++r)
          for (int j = 0; j < width; ++j)
            dx.row(n.indices[std::size_t(r * width + j)]) +=
                dy.block(r, j * cols, 1, cols);
      }
      break;
    }
  }
}

inline Gradients Graph::backward(Var root) {
  if (root.graph() != this) throw UsageError("backward: root not in graph");
  const Node& r = nodes_.at(root.id());
  if (r.value.size() != 1)
    throw UsageError("backward: root must be scalar, got " +
                     detail::shape_str(r.value));
  for (auto& n : nodes_) n.adjoint.resize(0, 0);
  nodes_[root.id()].adjoint = RowMatrix::Ones(1, 1);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.adjoint.size() == 0) continue;
    backprop_node(id);
  }
  Gradients out;
  for (const auto& [key, id] : param_nodes_) {
    const Node& n = nodes_[id];
    out.all()[key] = n.adjoint.size() ? n.adjoint
                                      : RowMatrix::Zero(n.value.rows(),
                                                        n.value.cols());
  }
  return out;
}

}  // namespace strep::ad
