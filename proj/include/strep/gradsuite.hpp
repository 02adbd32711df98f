#pragma once

// Finite-difference checks over every engine primitive and the composite
// objectives built from them. Shared by the gradcheck command and the tests.

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "strep/gradcheck.hpp"
#include "strep/losses.hpp"
#include "strep/model.hpp"

namespace strep::ad {

struct GradCase {
  std::string name;
  double tolerance = 1e-5;
  std::function<GradCheckReport(std::uint64_t seed)> run;
};

struct GradCaseResult {
  std::string name;
  double tolerance = 0.0;
  double worst_rel_error = 0.0;
  int seeds = 0;
  int failures = 0;
  bool passed() const { return failures == 0; }
};

namespace suite_detail {

inline RowMatrix uniform(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng,
                         double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

// Values bounded away from zero so relu kinks sit far from every probe.
inline RowMatrix off_zero(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  RowMatrix m = uniform(r, c, rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (sign(rng)) m.data()[i] = -m.data()[i];
  return m;
}

// Contracts a tensor-valued node against fixed random weights so that every
// output entry carries a distinct adjoint.
inline Var project(Graph& g, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
  return sum(mul(out, g.constant(uniform(out.rows(), out.cols(), rng))));
}

using Builder = std::function<Var(Graph&, const std::vector<RowMatrix>&)>;

inline GradCase unary(std::string name, std::function<Var(Var)> op,
                      Eigen::Index r, Eigen::Index c, bool avoid_zero = false) {
  return {std::move(name), 1e-5, [=](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            std::vector<RowMatrix> p{avoid_zero ? off_zero(r, c, rng)
                                                : uniform(r, c, rng)};
            return grad_check(
                [&](Graph& g, const std::vector<RowMatrix>& v) {
                  return project(g, op(g.parameter(v[0], 0)), seed);
                },
                p, 1e-5);
          }};
}

inline GradCase binary(std::string name, std::function<Var(Var, Var)> op,
                       Eigen::Index ra, Eigen::Index ca, Eigen::Index rb,
                       Eigen::Index cb) {
  return {std::move(name), 1e-5, [=](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            std::vector<RowMatrix> p{uniform(ra, ca, rng), uniform(rb, cb, rng)};
            return grad_check(
                [&](Graph& g, const std::vector<RowMatrix>& v) {
                  return project(
                      g, op(g.parameter(v[0], 0), g.parameter(v[1], 1)), seed);
                },
                p, 1e-5);
          }};
}

// Small decoder sized for finite differences; same layer structure as the
// production decoder.
inline DecoderConfig small_decoder(int dim) {
  DecoderConfig c = DecoderConfig::defaults_for(dim);
  c.latent_dim = 4;
  c.point_widths = {8, 16};
  c.head_widths = {12, 6};
  c.head_init_scale = 1.0;
  c.trans_scale = dim == 2 ? 2.0 : 0.5;
  return c;
}

// Weights as initialised, biases redrawn: zero biases put relu inputs of
// units fed only by dead units exactly on the kink.
inline std::vector<RowMatrix> layer_params(const std::vector<Layer>& layers,
                                           std::mt19937_64& rng) {
  std::vector<RowMatrix> out;
  for (const auto& l : layers) {
    out.push_back(l.weight);
    out.push_back(uniform(1, l.bias.cols(), rng, -0.5, 0.5));
  }
  return out;
}

inline std::vector<Layer> layers_from(const std::vector<RowMatrix>& v,
                                      std::size_t first, std::size_t count) {
  std::vector<Layer> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back({v[first + 2 * i], v[first + 2 * i + 1]});
  return out;
}

// Binds layers as parameters keyed by their position in the parameter list.
inline BoundDecoder bind_decoder_at(Graph& g, const PoseDecoder& shape,
                                    const std::vector<RowMatrix>& v,
                                    std::size_t first) {
  PoseDecoder d = shape;
  d.point_stage = layers_from(v, first, shape.point_stage.size());
  d.head = layers_from(v, first + 2 * shape.point_stage.size(), shape.head.size());
  return bind_decoder(g, d, int(first), true);
}

inline GradCheckOptions sampled(std::uint64_t seed, double step = 1e-5) {
  GradCheckOptions o;
  o.max_entries = 6;
  o.seed = seed;
  o.step = step;
  return o;
}

// Smallest distance of any relu input from zero, or of a max-pool winner
// from its runner-up.
inline double kink_margin(const Graph& g) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Node& n = g.node(int(i));
    if (n.op == Op::kRelu) {
      m = std::min(m, g.node(n.parents[0]).value.cwiseAbs().minCoeff());
    } else if (n.op == Op::kMaxOverPoints) {
      const RowMatrix& x = g.node(n.parents[0]).value;
      if (x.rows() < 2) continue;
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Eigen::VectorXd col = x.col(c);
        std::partial_sort(col.data(), col.data() + 2, col.data() + col.size(),
                          std::greater<double>());
        // Columns where every point is relu-dead have zero gradient on
        // both sides; the relu check covers their kinks.
        if (col[0] == 0.0 && col[1] == 0.0) continue;
        m = std::min(m, col[0] - col[1]);
      }
    }
  }
  return m;
}

inline constexpr double kKinkMargin = 1e-4;

// Redraws a case until every relu input and max-pool winner is at least
// kKinkMargin away from a tie, then runs the finite-difference check.
template <class Draw>
GradCheckReport check_tie_free(std::uint64_t seed, double tol, Draw draw,
                               double step = 1e-5) {
  std::mt19937_64 rng(seed);
  for (int attempt = 0;; ++attempt) {
    auto [params, build] = draw(rng);
    Graph g;
    build(g, params);
    if (kink_margin(g) >= kKinkMargin || attempt == 1000)
      return grad_check(build, params, tol, sampled(seed, step));
  }
}

}  // namespace suite_detail

inline std::vector<GradCase> grad_cases() {
  using namespace suite_detail;
  std::vector<GradCase> cases;
  cases.push_back(binary("linear",
                         [](Var w, Var x) {
                           Graph& g = *w.graph();
                           return linear(w, g.constant(RowMatrix::Constant(1, 4, 0.3)), x);
                         },
                         3, 4, 5, 3));
  cases.push_back({"linear_bias", 1e-5, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::vector<RowMatrix> p{uniform(3, 4, rng), uniform(1, 4, rng),
                                              uniform(5, 3, rng)};
                     return grad_check(
                         [&](Graph& g, const std::vector<RowMatrix>& v) {
                           return project(g,
                                          linear(g.parameter(v[0], 0),
                                                 g.parameter(v[1], 1),
                                                 g.parameter(v[2], 2)),
                                          seed);
                         },
                         p, 1e-5);
                   }});
  cases.push_back(unary("relu", [](Var x) { return relu(x); }, 4, 5, true));
  cases.push_back(unary("sin", [](Var x) { return sin(x); }, 4, 5));
  cases.push_back(unary("cos", [](Var x) { return cos(x); }, 4, 5));
  cases.push_back(binary("concat", [](Var a, Var b) { return concat(a, b); }, 4, 2, 4, 3));
  cases.push_back(binary("concat_broadcast",
                         [](Var a, Var b) { return concat(a, b); }, 5, 2, 1, 3));
  // Distinct values per column keep the maximum unique under perturbation.
  cases.push_back({"max_over_points", 1e-5, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     RowMatrix x(6, 4);
                     for (Eigen::Index c = 0; c < 4; ++c) {
                       std::vector<double> col;
                       for (int r = 0; r < 6; ++r) col.push_back(0.2 * r);
                       std::shuffle(col.begin(), col.end(), rng);
                       for (int r = 0; r < 6; ++r) x(r, c) = col[std::size_t(r)];
                     }
                     x += uniform(6, 4, rng, -0.05, 0.05);
                     return grad_check(
                         [&](Graph& g, const std::vector<RowMatrix>& v) {
                           return project(g, max_over_points(g.parameter(v[0], 0)), seed);
                         },
                         {x}, 1e-5);
                   }});
  cases.push_back(binary("add", [](Var a, Var b) { return add(a, b); }, 3, 4, 3, 4));
  cases.push_back(binary("sub", [](Var a, Var b) { return sub(a, b); }, 3, 4, 3, 4));
  cases.push_back(binary("mul", [](Var a, Var b) { return mul(a, b); }, 3, 4, 3, 4));
  cases.push_back(unary("square", [](Var x) { return square(x); }, 3, 4));
  cases.push_back(unary("sum", [](Var x) { return sum(x); }, 3, 4));
  cases.push_back(unary("mean", [](Var x) { return mean(x); }, 3, 4));
  cases.push_back({"sigmoid_bce", 1e-5, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     RowMatrix labels(5, 1);
                     labels << 1, 0, 0, 1, 1;
                     std::vector<RowMatrix> p{uniform(5, 1, rng, -4.0, 4.0)};
                     return grad_check(
                         [&](Graph& g, const std::vector<RowMatrix>& v) {
                           return project(g, sigmoid_bce(g.parameter(v[0], 0), labels),
                                          seed);
                         },
                         p, 1e-5);
                   }});
  cases.push_back(unary("gather", [](Var x) { return gather(x, {2, 0, 2, 3}); }, 4, 3));
  cases.push_back(unary("scale", [](Var x) { return scale(x, -1.7); }, 3, 4));
  cases.push_back(unary("column_scale",
                        [](Var x) {
                          Eigen::VectorXd f(3);
                          f << 2.0, -0.5, 3.0;
                          return column_scale(x, f);
                        },
                        4, 3));
  cases.push_back(unary("slice_cols", [](Var x) { return slice_cols(x, 1, 2); }, 3, 4));
  cases.push_back(unary("unfold", [](Var x) { return unfold(x, 3); }, 6, 2));
  cases.push_back(binary("transform_2d", [](Var p, Var x) { return transform(p, x); },
                         1, 3, 7, 2));
  cases.push_back(binary("transform_3d", [](Var p, Var x) { return transform(p, x); },
                         1, 6, 7, 3));

  for (int dim : {2, 3}) {
    cases.push_back(
        {"pose_decoder_" + std::to_string(dim) + "d", 1e-5, [dim](std::uint64_t seed) {
           return check_tie_free(seed, 1e-5, [dim](std::mt19937_64& rng) {
             const DecoderConfig cfg = small_decoder(dim);
             const PoseDecoder shape = make_decoder(cfg, rng);
             std::vector<RowMatrix> p = layer_params(shape.point_stage, rng);
             for (auto& m : layer_params(shape.head, rng)) p.push_back(m);
             const std::size_t zkey = p.size();
             p.push_back(uniform(1, cfg.latent_dim, rng));
             const RowMatrix pts = uniform(9, dim, rng, -5.0, 5.0);
             Builder b = [=](Graph& g, const std::vector<RowMatrix>& v) {
               BoundDecoder dec = bind_decoder_at(g, shape, v, 0);
               Var z = g.parameter(v[zkey], int(zkey));
               return project(g, decode_pose(dec, g.constant(pts), z), 7);
             };
             return std::make_pair(p, b);
           });
         }});
  }

  cases.push_back({"chamfer", 1e-5, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::vector<RowMatrix> p{uniform(12, 2, rng, -3.0, 3.0),
                                              uniform(10, 2, rng, -3.0, 3.0)};
                     const NearestPairs nn = nearest_pairs(p[0], p[1]);
                     return grad_check(
                         [&](Graph& g, const std::vector<RowMatrix>& v) {
                           return chamfer(g.parameter(v[0], 0), g.parameter(v[1], 1), nn);
                         },
                         p, 1e-5);
                   }});

  cases.push_back({"global_loss", 1e-5, [](std::uint64_t seed) {
                     return check_tie_free(seed, 1e-5, [](std::mt19937_64& rng) {
                       OccupancyConfig ocfg;
                       ocfg.hidden = {8, 16, 8};
                       ocfg.world_extent = Eigen::VectorXd::Constant(2, 4.0);
                       const OccupancyNet shape = make_occupancy_net(ocfg, rng);
                       std::vector<RowMatrix> p = layer_params(shape.layers, rng);
                       const std::size_t pose_key = p.size();
                       p.push_back(uniform(1, 3, rng));
                       std::vector<std::pair<RowMatrix, RowMatrix>> frames;
                       for (int j = 0; j < 2; ++j)
                         frames.push_back({uniform(6, 2, rng, -3.0, 3.0),
                                           uniform(6, 2, rng, -3.0, 3.0)});
                       Builder b = [=](Graph& g, const std::vector<RowMatrix>& v) {
                         OccupancyNet net = shape;
                         net.layers = layers_from(v, 0, shape.layers.size());
                         BoundOccupancy occ = bind_occupancy(g, net, 0, true);
                         Var pose = g.parameter(v[pose_key], int(pose_key));
                         std::vector<FrameQueries> q;
                         for (const auto& [o, f] : frames)
                           q.push_back({transform(pose, g.constant(o)),
                                        transform(pose, g.constant(f))});
                         return global_loss(occ, q);
                       };
                       return std::make_pair(p, b);
                     });
                   }});

  // Full objective: latents -> fusion -> decoder -> rigid transform ->
  // local Chamfer loss + weighted occupancy loss.
  cases.push_back({"total_loss", 1e-4, [](std::uint64_t seed) {
                     return check_tie_free(seed, 1e-4, [](std::mt19937_64& rng) {
                       const DecoderConfig dcfg = small_decoder(2);
                       const PoseDecoder shape = make_decoder(dcfg, rng);
                       OccupancyConfig ocfg;
                       ocfg.hidden = {8, 8};
                       ocfg.world_extent = Eigen::VectorXd::Constant(2, 2.0);
                       const OccupancyNet oshape = make_occupancy_net(ocfg, rng);
                       std::vector<RowMatrix> p = layer_params(shape.point_stage, rng);
                       for (auto& m : layer_params(shape.head, rng)) p.push_back(m);
                       const std::size_t occ_first = p.size();
                       for (auto& m : layer_params(oshape.layers, rng)) p.push_back(m);
                       const std::size_t raw_key = p.size();
                       const int frames = 3;
                       p.push_back(uniform(frames, dcfg.latent_dim, rng));
                       p.push_back(uniform(1, dcfg.latent_dim, rng, 0.2, 0.8));
                       std::vector<RowMatrix> pts, free;
                       for (int j = 0; j < frames; ++j) {
                         pts.push_back(uniform(8, 2, rng, -1.5, 1.5));
                         free.push_back(uniform(8, 2, rng, -1.5, 1.5));
                       }
                       // Nearest pairs are frozen at the unperturbed poses so
                       // the finite differences see the same matching.
                       auto frozen = std::make_shared<std::vector<NearestPairs>>();
                       Builder b = [=](Graph& g, const std::vector<RowMatrix>& v) {
                         BoundDecoder dec = bind_decoder_at(g, shape, v, 0);
                         OccupancyNet net = oshape;
                         net.layers = layers_from(v, occ_first, oshape.layers.size());
                         BoundOccupancy occ = bind_occupancy(g, net, int(occ_first), true);
                         const auto z = fuse_latents(
                             g.parameter(v[raw_key], int(raw_key)),
                             g.parameter(v[raw_key + 1], int(raw_key + 1)));
                         std::vector<Var> world;
                         std::vector<FrameQueries> q;
                         for (std::size_t j = 0; j < std::size_t(frames); ++j) {
                           Var pose = decode_pose(dec, g.constant(pts[j]), z[j]);
                           world.push_back(transform(pose, g.constant(pts[j])));
                           q.push_back({world.back(), transform(pose, g.constant(free[j]))});
                         }
                         const bool record = frozen->empty();
                         Var local;
                         for (std::size_t j = 0; j + 1 < std::size_t(frames); ++j) {
                           if (record)
                             frozen->push_back(
                                 nearest_pairs(world[j].value(), world[j + 1].value()));
                           Var c = chamfer(world[j], world[j + 1], (*frozen)[j]);
                           local = local.valid() ? add(local, c) : c;
                         }
                         return add(scale(local, 2.0), scale(global_loss(occ, q), 0.7));
                       };
                       return std::make_pair(p, b);
                     }, 1e-4);
                   }});
  return cases;
}

/// Runs every case for seeds first_seed .. first_seed + seeds - 1.
inline std::vector<GradCaseResult> run_grad_suite(int seeds,
                                                  std::uint64_t first_seed = 1) {
  std::vector<GradCaseResult> out;
  for (const GradCase& c : grad_cases()) {
    GradCaseResult r;
    r.name = c.name;
    r.tolerance = c.tolerance;
    for (int s = 0; s < seeds; ++s) {
      const GradCheckReport rep = c.run(first_seed + std::uint64_t(s));
      r.worst_rel_error = std::max(r.worst_rel_error, rep.max_rel_error);
      ++r.seeds;
      if (!rep.passed) ++r.failures;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace strep::ad
