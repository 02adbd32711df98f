#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "strep/geometry.hpp"

namespace strep {

/// Adam moments for a fixed list of parameter tensors, each with its own
/// learning rate. Step counts are kept per tensor so that a tensor skipped in
/// an iteration (no gradient) keeps a correct bias correction.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<RowMatrix> m;
  std::vector<RowMatrix> v;
  std::vector<double> lr;
  std::vector<std::int64_t> steps;

  std::size_t size() const { return m.size(); }
};

inline AdamState make_adam(const std::vector<const RowMatrix*>& params,
                           const std::vector<double>& lrs) {
  if (params.size() != lrs.size())
    throw UsageError("make_adam: one learning rate per parameter required");
  AdamState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(lrs[i] > 0.0)) throw UsageError("learning rates must be > 0");
    s.m.push_back(RowMatrix::Zero(params[i]->rows(), params[i]->cols()));
    s.v.push_back(RowMatrix::Zero(params[i]->rows(), params[i]->cols()));
    s.lr.push_back(lrs[i]);
    s.steps.push_back(0);
  }
  return s;
}

/// Bias-corrected Adam update. grads[i] == nullptr leaves parameter i and its
/// moments untouched.
inline void adam_step(AdamState& s, const std::vector<RowMatrix*>& params,
                      const std::vector<const RowMatrix*>& grads) {
  if (params.size() != s.size() || grads.size() != s.size())
    throw UsageError("adam_step: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i] == nullptr) continue;
    RowMatrix& p = *params[i];
    const RowMatrix& g = *grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols() ||
        s.m[i].rows() != p.rows() || s.m[i].cols() != p.cols())
      throw UsageError("adam_step: shape mismatch at slot " + std::to_string(i));
    const std::int64_t t = ++s.steps[i];
    const double c1 = 1.0 - std::pow(s.beta1, double(t));
    const double c2 = 1.0 - std::pow(s.beta2, double(t));
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g.cwiseProduct(g);
    p.array() -= s.lr[i] * (s.m[i].array() / c1) /
                 ((s.v[i].array() / c2).sqrt() + s.eps);
  }
}

}  // namespace strep
