#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "strep/diffengine.hpp"

namespace strep::ad {

struct ParamCheck {
  int key = 0;
  std::size_t checked_entries = 0;
  // max |analytic - numeric| / max(max |analytic|, max |numeric|) over the
  // checked entries of this parameter.
  double rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Entries probed per parameter tensor; 0 probes every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients with central finite differences.
///
/// `build(graph, params)` must register params[i] with key i through
/// graph.parameter() and return a scalar root. It is called once for the
/// analytic pass and twice per probed entry, so it has to be deterministic.
template <class Builder>
GradCheckReport grad_check(Builder&& build, const std::vector<RowMatrix>& params,
                           double tol, GradCheckOptions opts = {}) {
  Gradients analytic;
  {
    Graph g;
    Var root = build(g, params);
    analytic = g.backward(root);
  }
  auto evaluate = [&](const std::vector<RowMatrix>& p) {
    Graph g;
    return build(g, p).scalar();
  };

  GradCheckReport report;
  report.tolerance = tol;
  std::mt19937_64 rng(opts.seed);
  std::vector<RowMatrix> probe = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const int key = static_cast<int>(k);
    const RowMatrix& grad = analytic.at(key);
    const Eigen::Index total = params[k].size();
    std::vector<Eigen::Index> entries(static_cast<std::size_t>(total));
    for (Eigen::Index i = 0; i < total; ++i) entries[std::size_t(i)] = i;
    if (opts.max_entries > 0 && entries.size() > opts.max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opts.max_entries);
      std::sort(entries.begin(), entries.end());
    }
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (Eigen::Index e : entries) {
      double& slot = probe[k].data()[e];
      const double orig = slot;
      slot = orig + opts.step;
      const double fp = evaluate(probe);
      slot = orig - opts.step;
      const double fm = evaluate(probe);
      slot = orig;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double a = grad.data()[e];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
    }
    ParamCheck pc;
    pc.key = key;
    pc.checked_entries = entries.size();
    pc.max_abs_error = max_diff;
    const double denom = std::max(max_a, max_n);
    pc.rel_error = denom > 0.0 ? max_diff / denom : 0.0;
    report.max_rel_error = std::max(report.max_rel_error, pc.rel_error);
    report.params.push_back(pc);
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace strep::ad
