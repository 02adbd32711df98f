#pragma once

// Joint optimisation of decoder, occupancy net, latents and decay, and
// latent-only adaptation against a frozen model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "strep/adam.hpp"
#include "strep/diffengine.hpp"
#include "strep/losses.hpp"
#include "strep/metrics.hpp"
#include "strep/model.hpp"
#include "strep/simulator.hpp"

namespace strep {

struct TrainConfig {
  double lr_net = 1e-3;
  double lr_latent = 1e-4;
  int iters = 400;
  int batch_frames = 128;
  double lambda_global = 1.0;
  int s_per_beam = 8;
  std::uint64_t seed = 0;
  int neighbor_radius = 1;
  int eval_every = 100;
  int threads = 1;
  // false forces the decay to zero and keeps it out of the optimiser.
  bool temporal = true;
  // Global-norm gradient clipping; 0 disables it.
  double clip_norm = 0.0;
  // Occupied points and free samples drawn per frame for the global loss
  // each iteration; 0 uses all of them.
  int occupancy_queries = 32;
  AnchorMode anchor = AnchorMode::kFit;

  static TrainConfig defaults_for(int dim) {
    TrainConfig c;
    c.batch_frames = dim == 2 ? 128 : 8;
    return c;
  }

  void validate() const {
    if (!(lr_net > 0.0) || !(lr_latent > 0.0))
      throw UsageError("learning rates must be > 0");
    if (iters < 0) throw UsageError("iters must be >= 0");
    if (batch_frames < 2) throw UsageError("batch_frames must be >= 2");
    if (lambda_global < 0.0) throw UsageError("lambda_global must be >= 0");
    if (s_per_beam < 1) throw UsageError("s_per_beam must be >= 1");
    if (neighbor_radius < 1) throw UsageError("neighbor radius must be >= 1");
    if (eval_every < 1) throw UsageError("eval_every must be >= 1");
    if (threads < 1) throw UsageError("threads must be >= 1");
    if (clip_norm < 0.0) throw UsageError("clip_norm must be >= 0");
    if (occupancy_queries < 0) throw UsageError("occupancy_queries must be >= 0");
  }
};

// Shared, trainable state of a run: decoder weights, occupancy weights, and
// the decay vector used by every latent chain.
struct StrepModel {
  PoseDecoder decoder;
  OccupancyNet occupancy;
  RowMatrix decay;  // 1 x b
  bool temporal = true;

  int dim() const { return decoder.config.dim; }
  int latent_dim() const { return decoder.config.latent_dim; }

  LatentChain chain_with(const RowMatrix& raw) const {
    return LatentChain{raw, temporal ? decay : RowMatrix::Zero(1, decay.cols())};
  }
};

struct HistoryRow {
  int iteration = 0;
  double local_loss = 0.0;
  double global_loss = 0.0;
  double total = 0.0;
  std::optional<double> ate;
  std::optional<double> point_dist;
};

struct TrainResult {
  StrepModel model;
  std::vector<LatentChain> chains;
  std::vector<std::vector<Pose>> poses;
  std::vector<HistoryRow> history;
};

struct AdaptResult {
  LatentChain chain;
  std::vector<Pose> poses;
  std::vector<HistoryRow> history;
};

// Called after every recorded history row.
using ProgressFn = std::function<void(const HistoryRow&)>;

inline StrepModel init_strep_model(const DecoderConfig& dcfg,
                                   const OccupancyConfig& ocfg,
                                   std::uint64_t seed, bool temporal = true) {
  std::mt19937_64 rng(seed);
  StrepModel m;
  m.decoder = make_decoder(dcfg, rng);
  m.occupancy = make_occupancy_net(ocfg, rng);
  m.temporal = temporal;
  m.decay = RowMatrix::Constant(1, dcfg.latent_dim, temporal ? 0.5 : 0.0);
  return m;
}

// Largest local point norm over the datasets, used as the occupancy input
// scale when none is configured.
inline Eigen::VectorXd auto_world_extent(
    const std::vector<SequenceDataset>& data) {
  double r = 1.0;
  for (const auto& ds : data)
    for (const auto& f : ds.frames)
      r = std::max(r, f.points.rowwise().norm().maxCoeff());
  return Eigen::VectorXd::Constant(data.at(0).dim, r);
}

namespace detail {

struct LossTerms {
  ad::Var local;
  ad::Var global;
  ad::Var total;
  std::vector<ad::Var> poses;
};

// Free-space and occupied query rows (local coordinates) for one frame.
inline std::pair<RowMatrix, RowMatrix> occupancy_queries(const PointSet& frame,
                                                         int per_beam, int count,
                                                         std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RowMatrix free = sample_free_space(frame.points, frame.sensor_origin, per_beam,
                                     [&] { return unit(rng); });
  if (count <= 0) return {frame.points, std::move(free)};
  std::uniform_int_distribution<Eigen::Index> occ_pick(0, frame.size() - 1);
  std::uniform_int_distribution<Eigen::Index> free_pick(0, free.rows() - 1);
  RowMatrix occ_rows(count, frame.dim), free_rows(count, frame.dim);
  for (int i = 0; i < count; ++i) {
    occ_rows.row(i) = frame.points.row(occ_pick(rng));
    free_rows.row(i) = free.row(free_pick(rng));
  }
  return {std::move(occ_rows), std::move(free_rows)};
}

/// Builds the objective for frames [begin, end) of one sequence. Fused
/// latents are computed over the whole chain.
inline LossTerms build_objective(const BoundDecoder& dec,
                                 const BoundOccupancy& occ, ad::Var raw,
                                 ad::Var decay, const SequenceDataset& ds,
                                 std::size_t begin, std::size_t end,
                                 const TrainConfig& cfg, std::uint64_t stream) {
  ad::Graph& g = *raw.graph();
  const std::vector<ad::Var> fused = fuse_latents(raw, decay);
  LossTerms t;
  std::vector<ad::Var> world;
  std::vector<FrameQueries> queries;
  for (std::size_t j = begin; j < end; ++j) {
    const PointSet& f = ds.frames[j];
    ad::Var pts = g.constant(f.points);
    ad::Var pose = decode_pose(dec, pts, fused[j]);
    t.poses.push_back(pose);
    world.push_back(ad::transform(pose, pts));
    if (cfg.lambda_global > 0.0) {
      // One generator per frame and iteration.
      std::mt19937_64 rng(trajectory_seed(stream, j, 0x51u));
      auto [occ_rows, free_rows] =
          occupancy_queries(f, cfg.s_per_beam, cfg.occupancy_queries, rng);
      queries.push_back({ad::transform(pose, g.constant(std::move(occ_rows))),
                         ad::transform(pose, g.constant(std::move(free_rows)))});
    }
  }
  t.local = local_loss(world, NeighborSpec{cfg.neighbor_radius},
                       NeighborSearch::kAuto, cfg.threads);
  if (cfg.lambda_global > 0.0) {
    t.global = global_loss(occ, queries);
    t.total = ad::add(t.local, ad::scale(t.global, cfg.lambda_global));
  } else {
    t.total = t.local;
  }
  return t;
}

inline void check_term(const ad::Var& v, const char* term, int iteration) {
  if (v.valid() && !std::isfinite(v.scalar()))
    throw NumericError("divergence at iteration " + std::to_string(iteration) +
                       ": " + term + " is not finite");
}

inline double clip_scale(const std::vector<const RowMatrix*>& grads,
                         double clip_norm) {
  if (clip_norm <= 0.0) return 1.0;
  double sq = 0.0;
  for (const RowMatrix* g : grads)
    if (g) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  return norm > clip_norm ? clip_norm / norm : 1.0;
}

struct EvalSummary {
  std::optional<double> ate;
  std::optional<double> point_dist;
};

inline EvalSummary evaluate_all(const StrepModel& model,
                                const std::vector<SequenceDataset>& data,
                                const std::vector<RowMatrix>& raws,
                                AnchorMode anchor,
                                std::vector<std::vector<Pose>>* poses_out) {
  EvalSummary s;
  double ate_sum = 0.0, pd_sum = 0.0;
  int with_gt = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<Pose> poses =
        decode_all(model.decoder, data[i].frames, model.chain_with(raws[i]));
    if (data[i].has_gt()) {
      const EvalReport r = evaluate(poses, *data[i].gt_poses, data[i].frames, anchor);
      ate_sum += r.ate;
      pd_sum += r.point_dist;
      ++with_gt;
    }
    if (poses_out) poses_out->push_back(std::move(poses));
  }
  if (with_gt) {
    s.ate = ate_sum / with_gt;
    s.point_dist = pd_sum / with_gt;
  }
  return s;
}

inline HistoryRow loss_row(int iteration, const LossTerms& t) {
  HistoryRow row;
  row.iteration = iteration;
  row.local_loss = t.local.scalar();
  row.global_loss = t.global.valid() ? t.global.scalar() : 0.0;
  row.total = t.total.scalar();
  return row;
}

}  // namespace detail

/// Joint optimisation of decoder weights, occupancy weights, every raw
/// latent and the decay vector with Adam on local + lambda * global loss.
/// Each iteration takes a contiguous window of batch_frames frames from a
/// randomly chosen sequence.
inline TrainResult train(const std::vector<SequenceDataset>& data,
                         StrepModel model, const TrainConfig& cfg,
                         const ProgressFn& progress = {}) {
  cfg.validate();
  if (data.empty()) throw UsageError("train: no sequences");
  for (const auto& ds : data) {
    ds.validate();
    if (ds.size() < 2) throw UsageError("train: every sequence needs >= 2 frames");
    if (ds.dim != model.dim()) throw UsageError("train: dataset dim != model dim");
  }
  model.temporal = cfg.temporal;
  if (!cfg.temporal) model.decay.setZero();

  std::mt19937_64 rng(cfg.seed);
  std::vector<RowMatrix> raws;
  for (const auto& ds : data)
    raws.push_back(make_latents(Eigen::Index(ds.size()), model.latent_dim(), rng).raw);

  // Parameter slots: decoder layers, occupancy layers, decay, latents.
  std::vector<RowMatrix*> params;
  std::vector<double> lrs;
  for (auto* layers : {&model.decoder.point_stage, &model.decoder.head,
                       &model.occupancy.layers})
    for (auto& l : *layers) {
      params.push_back(&l.weight);
      params.push_back(&l.bias);
      lrs.insert(lrs.end(), {cfg.lr_net, cfg.lr_net});
    }
  const int dec_keys = decoder_key_count(model.decoder);
  const int occ_base = dec_keys;
  const int decay_key = dec_keys + occupancy_key_count(model.occupancy);
  params.push_back(&model.decay);
  lrs.push_back(cfg.lr_latent);
  const int latent_base = decay_key + 1;
  for (auto& r : raws) {
    params.push_back(&r);
    lrs.push_back(cfg.lr_latent);
  }
  AdamState adam = make_adam({params.begin(), params.end()}, lrs);

  TrainResult result;
  auto record = [&](HistoryRow row, bool eval) {
    if (eval) {
      const auto s = detail::evaluate_all(model, data, raws, cfg.anchor, nullptr);
      row.ate = s.ate;
      row.point_dist = s.point_dist;
    }
    result.history.push_back(row);
    if (progress) progress(row);
  };

  for (int it = 0; it < cfg.iters; ++it) {
    const std::size_t s =
        data.size() == 1 ? 0
                         : std::uniform_int_distribution<std::size_t>(
                               0, data.size() - 1)(rng);
    const SequenceDataset& ds = data[s];
    const std::size_t window = std::min<std::size_t>(std::size_t(cfg.batch_frames),
                                                     ds.size());
    const std::size_t begin =
        std::uniform_int_distribution<std::size_t>(0, ds.size() - window)(rng);
    const std::uint64_t stream = rng();

    ad::Graph g;
    BoundDecoder dec = bind_decoder(g, model.decoder, 0, true);
    BoundOccupancy occ = bind_occupancy(g, model.occupancy, occ_base, true);
    ad::Var decay = cfg.temporal ? g.parameter(model.decay, decay_key)
                                 : g.constant(model.decay);
    ad::Var raw = g.parameter(raws[s], latent_base + int(s));
    detail::LossTerms terms;
    try {
      terms = detail::build_objective(dec, occ, raw, decay, ds, begin,
                                      begin + window, cfg, stream);
    } catch (const NumericError& e) {
      throw NumericError("divergence at iteration " + std::to_string(it) +
                         ": " + e.what());
    }
    detail::check_term(terms.local, "local_loss", it);
    detail::check_term(terms.global, "global_loss", it);
    if (it % cfg.eval_every == 0) record(detail::loss_row(it, terms), true);

    ad::Gradients grads = g.backward(terms.total);
    std::vector<const RowMatrix*> gptr(params.size(), nullptr);
    for (const auto& [key, gm] : grads.all()) {
      if (!gm.allFinite())
        throw NumericError("divergence at iteration " + std::to_string(it) +
                           ": non-finite gradient for parameter slot " +
                           std::to_string(key));
      gptr[std::size_t(key)] = &gm;
    }
    const double scale = detail::clip_scale(gptr, cfg.clip_norm);
    std::vector<RowMatrix> clipped;
    if (scale < 1.0) {
      clipped.reserve(gptr.size());
      for (auto& gp : gptr)
        if (gp) {
          clipped.push_back(*gp * scale);
          gp = &clipped.back();
        }
    }
    adam_step(adam, params, gptr);
  }

  // Final row: losses at the final parameters over each whole sequence.
  {
    double local = 0.0, global = 0.0, total = 0.0;
    for (std::size_t s = 0; s < data.size(); ++s) {
      ad::Graph g;
      BoundDecoder dec = bind_decoder(g, model.decoder, 0, false);
      BoundOccupancy occ = bind_occupancy(g, model.occupancy, 0, false);
      auto terms = detail::build_objective(
          dec, occ, g.constant(raws[s]), g.constant(model.decay), data[s], 0,
          data[s].size(), cfg, trajectory_seed(cfg.seed, s, 0xF1u));
      local += terms.local.scalar();
      global += terms.global.valid() ? terms.global.scalar() : 0.0;
      total += terms.total.scalar();
    }
    HistoryRow row;
    row.iteration = cfg.iters;
    row.local_loss = local / double(data.size());
    row.global_loss = global / double(data.size());
    row.total = total / double(data.size());
    record(row, true);
  }

  detail::evaluate_all(model, data, raws, cfg.anchor, &result.poses);
  for (const auto& r : raws) result.chains.push_back(model.chain_with(r));
  result.model = std::move(model);
  return result;
}

inline TrainResult train(const std::vector<SequenceDataset>& data,
                         const DecoderConfig& dcfg, const TrainConfig& cfg,
                         const ProgressFn& progress = {}) {
  if (data.empty()) throw UsageError("train: no sequences");
  OccupancyConfig ocfg;
  ocfg.dim = dcfg.dim;
  ocfg.world_extent = auto_world_extent(data);
  return train(data, init_strep_model(dcfg, ocfg, cfg.seed, cfg.temporal), cfg,
               progress);
}

struct OccupancyFit {
  OccupancyNet net;
  // Mini-batch global loss before each step.
  std::vector<double> losses;
};

/// Fits only the occupancy network to a scene with fixed poses, using the
/// same per-frame query sampling as train().
inline OccupancyFit fit_occupancy(const GlobalScene& scene, OccupancyNet net, int steps,
                                  const TrainConfig& cfg) {
  cfg.validate();
  if (scene.frames.empty()) throw UsageError("fit_occupancy: scene is empty");
  std::vector<RowMatrix*> params;
  for (auto& l : net.layers) {
    params.push_back(&l.weight);
    params.push_back(&l.bias);
  }
  AdamState adam = make_adam({params.begin(), params.end()},
                             std::vector<double>(params.size(), cfg.lr_net));
  OccupancyFit fit;
  std::mt19937_64 rng(cfg.seed);
  for (int it = 0; it < steps; ++it) {
    const std::uint64_t stream = rng();
    ad::Graph g;
    BoundOccupancy occ = bind_occupancy(g, net, 0, true);
    std::vector<FrameQueries> queries;
    for (std::size_t j = 0; j < scene.frames.size(); ++j) {
      std::mt19937_64 frame_rng(trajectory_seed(stream, j, 0x51u));
      auto [o, f] = detail::occupancy_queries(scene.frames[j], cfg.s_per_beam,
                                              cfg.occupancy_queries, frame_rng);
      queries.push_back({g.constant(std::move(o)), g.constant(std::move(f))});
    }
    ad::Var loss = global_loss(occ, queries);
    detail::check_term(loss, "global_loss", it);
    fit.losses.push_back(loss.scalar());
    ad::Gradients grads = g.backward(loss);
    std::vector<const RowMatrix*> gptr;
    for (std::size_t k = 0; k < params.size(); ++k) gptr.push_back(&grads.at(int(k)));
    adam_step(adam, params, gptr);
  }
  fit.net = std::move(net);
  return fit;
}

/// Test-time adaptation: decoder, occupancy net and decay stay fixed; fresh
/// N(0, 1) latents for the new sequence are the only optimised variables.
inline AdaptResult adapt(const SequenceDataset& ds, const StrepModel& frozen,
                         const TrainConfig& cfg,
                         const ProgressFn& progress = {}) {
  cfg.validate();
  ds.validate();
  if (ds.dim != frozen.dim())
    throw UsageError("adapt: dataset dim " + std::to_string(ds.dim) +
                     " != checkpoint dim " + std::to_string(frozen.dim()));
  if (ds.size() < 2) throw UsageError("adapt: sequence needs >= 2 frames");

  std::mt19937_64 rng(cfg.seed);
  RowMatrix raw = make_latents(Eigen::Index(ds.size()), frozen.latent_dim(), rng).raw;
  const RowMatrix decay = frozen.chain_with(raw).decay;
  AdamState adam = make_adam({&raw}, {cfg.lr_latent});
  const std::vector<SequenceDataset> one{ds};

  AdaptResult result;
  auto record = [&](HistoryRow row) {
    std::vector<RowMatrix> raws{raw};
    const auto s = detail::evaluate_all(frozen, one, raws, cfg.anchor, nullptr);
    row.ate = s.ate;
    row.point_dist = s.point_dist;
    result.history.push_back(row);
    if (progress) progress(row);
  };

  for (int it = 0; it < cfg.iters; ++it) {
    const std::size_t window =
        std::min<std::size_t>(std::size_t(cfg.batch_frames), ds.size());
    const std::size_t begin =
        std::uniform_int_distribution<std::size_t>(0, ds.size() - window)(rng);
    const std::uint64_t stream = rng();
    ad::Graph g;
    BoundDecoder dec = bind_decoder(g, frozen.decoder, 0, false);
    BoundOccupancy occ = bind_occupancy(g, frozen.occupancy, 0, false);
    ad::Var raw_var = g.parameter(raw, 0);
    detail::LossTerms terms;
    try {
      terms = detail::build_objective(dec, occ, raw_var, g.constant(decay), ds,
                                      begin, begin + window, cfg, stream);
    } catch (const NumericError& e) {
      throw NumericError("divergence at iteration " + std::to_string(it) +
                         ": " + e.what());
    }
    detail::check_term(terms.local, "local_loss", it);
    detail::check_term(terms.global, "global_loss", it);
    if (it % cfg.eval_every == 0) record(detail::loss_row(it, terms));
    ad::Gradients grads = g.backward(terms.total);
    const RowMatrix& gr = grads.at(0);
    if (!gr.allFinite())
      throw NumericError("divergence at iteration " + std::to_string(it) +
                         ": non-finite latent gradient");
    std::vector<const RowMatrix*> gptr{&gr};
    const double scale = detail::clip_scale(gptr, cfg.clip_norm);
    RowMatrix clipped;
    if (scale < 1.0) {
      clipped = gr * scale;
      gptr[0] = &clipped;
    }
    adam_step(adam, {&raw}, gptr);
  }

  {
    ad::Graph g;
    BoundDecoder dec = bind_decoder(g, frozen.decoder, 0, false);
    BoundOccupancy occ = bind_occupancy(g, frozen.occupancy, 0, false);
    auto terms = detail::build_objective(dec, occ, g.constant(raw),
                                         g.constant(decay), ds, 0, ds.size(),
                                         cfg, trajectory_seed(cfg.seed, 0, 0xF1u));
    record(detail::loss_row(cfg.iters, terms));
  }

  result.chain = LatentChain{raw, decay};
  result.poses = decode_all(frozen.decoder, ds.frames, result.chain);
  return result;
}

}  // namespace strep
