#pragma once

// Per-frame latent chain with temporal fusion, and the shared pose decoder
// mapping (frame points, fused latent) to a sensor pose.

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "strep/diffengine.hpp"
#include "strep/geometry.hpp"
#include "strep/mlp.hpp"

namespace strep {

/// Raw per-frame latents (one row per frame) and the decay vector that mixes
/// each fused latent into the next.
struct LatentChain {
  RowMatrix raw;    // k x b
  RowMatrix decay;  // 1 x b

  Eigen::Index frames() const { return raw.rows(); }
  Eigen::Index latent_dim() const { return raw.cols(); }

  void validate() const {
    if (raw.rows() < 1) throw UsageError("latent chain has no frames");
    if (decay.rows() != 1 || decay.cols() != raw.cols())
      throw UsageError("decay must be 1 x latent_dim");
  }
};

// z_1 = raw_1, z_k = raw_k + decay * z_{k-1} (elementwise).
inline RowMatrix fuse_latents(const LatentChain& chain) {
  chain.validate();
  RowMatrix fused(chain.raw.rows(), chain.raw.cols());
  fused.row(0) = chain.raw.row(0);
  for (Eigen::Index k = 1; k < chain.raw.rows(); ++k)
    fused.row(k) =
        chain.raw.row(k) + chain.decay.row(0).cwiseProduct(fused.row(k - 1));
  return fused;
}

// Graph form of fuse_latents; returns one 1 x b node per frame.
inline std::vector<ad::Var> fuse_latents(ad::Var raw, ad::Var decay) {
  if (decay.rows() != 1 || decay.cols() != raw.cols())
    throw UsageError("fuse_latents: decay must be 1 x latent_dim");
  std::vector<ad::Var> fused;
  fused.reserve(std::size_t(raw.rows()));
  fused.push_back(ad::gather(raw, {0}));
  for (Eigen::Index k = 1; k < raw.rows(); ++k)
    fused.push_back(
        ad::add(ad::gather(raw, {k}), ad::mul(decay, fused.back())));
  return fused;
}

struct DecoderConfig {
  int dim = 2;
  int latent_dim = 16;
  // Odd width of the per-point convolution along scan order. 1 is a shared
  // per-point MLP and keeps the decoder permutation invariant.
  int kernel_width = 1;
  double trans_scale = 20.0;
  std::vector<int> point_widths = {64, 256, 1024};
  std::vector<int> head_widths = {512, 128};
  // Multiplier on the final head layer's initial weights. 0 starts every
  // frame at the identity pose.
  double head_init_scale = 0.0;

  static DecoderConfig defaults_for(int dim) {
    DecoderConfig c;
    c.dim = dim;
    c.latent_dim = dim == 2 ? 16 : 24;
    c.trans_scale = dim == 2 ? 20.0 : 0.5;
    return c;
  }

  int pose_params() const { return pose_param_count(dim); }
};

struct PoseDecoder {
  DecoderConfig config;
  std::vector<Layer> point_stage;
  std::vector<Layer> head;

  bool finite() const {
    return layers_finite(point_stage) && layers_finite(head);
  }
};

inline PoseDecoder make_decoder(const DecoderConfig& cfg, std::mt19937_64& rng) {
  check_dim(cfg.dim);
  if (cfg.latent_dim < 1) throw UsageError("latent_dim must be >= 1");
  if (cfg.kernel_width < 1 || cfg.kernel_width % 2 == 0)
    throw UsageError("kernel_width must be a positive odd integer");
  if (!(cfg.trans_scale > 0.0)) throw UsageError("trans_scale must be > 0");
  PoseDecoder d;
  d.config = cfg;
  int in = cfg.dim + cfg.latent_dim;
  for (int w : cfg.point_widths) {
    d.point_stage.push_back(make_layer(in * cfg.kernel_width, w, rng));
    in = w;
  }
  for (int w : cfg.head_widths) {
    d.head.push_back(make_layer(in, w, rng));
    in = w;
  }
  d.head.push_back(
      make_layer(in, cfg.pose_params(), rng, cfg.head_init_scale));
  return d;
}

inline LatentChain make_latents(Eigen::Index frames, int latent_dim,
                                std::mt19937_64& rng, double decay_init = 0.5) {
  if (frames < 1) throw UsageError("latent chain needs at least one frame");
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentChain c;
  c.raw.resize(frames, latent_dim);
  for (Eigen::Index i = 0; i < c.raw.size(); ++i) c.raw.data()[i] = normal(rng);
  c.decay = RowMatrix::Constant(1, latent_dim, decay_init);
  return c;
}

// Decoder weights are drawn before the latents from the same generator.
inline std::pair<PoseDecoder, LatentChain> init_model(const DecoderConfig& cfg,
                                                      Eigen::Index frames,
                                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PoseDecoder d = make_decoder(cfg, rng);
  LatentChain c = make_latents(frames, cfg.latent_dim, rng);
  return {std::move(d), std::move(c)};
}

struct BoundDecoder {
  DecoderConfig config;
  std::vector<BoundLayer> point_stage;
  std::vector<BoundLayer> head;
};

inline int decoder_key_count(const PoseDecoder& d) {
  return 2 * static_cast<int>(d.point_stage.size() + d.head.size());
}

inline BoundDecoder bind_decoder(ad::Graph& g, const PoseDecoder& d,
                                 int key_base, bool trainable) {
  BoundDecoder b;
  b.config = d.config;
  b.point_stage = bind_layers(g, d.point_stage, key_base, trainable);
  b.head = bind_layers(
      g, d.head, key_base + 2 * static_cast<int>(d.point_stage.size()),
      trainable);
  return b;
}

/// Pose of one frame as a 1 x P node: each point is concatenated with the
/// latent, run through the point stage, max-pooled, and mapped by the head.
/// Translation outputs are multiplied by trans_scale; angles are used as-is.
inline ad::Var decode_pose(const BoundDecoder& dec, ad::Var points, ad::Var z) {
  const DecoderConfig& cfg = dec.config;
  if (points.cols() != cfg.dim)
    throw UsageError("decode_pose: frame dim " + std::to_string(points.cols()) +
                     " != decoder dim " + std::to_string(cfg.dim));
  if (z.rows() != 1 || z.cols() != cfg.latent_dim)
    throw UsageError("decode_pose: latent must be 1 x " +
                     std::to_string(cfg.latent_dim));
  ad::Var x = ad::concat(points, z);
  for (const auto& layer : dec.point_stage) {
    if (cfg.kernel_width > 1) x = ad::unfold(x, cfg.kernel_width);
    x = ad::relu(ad::linear(layer.weight, layer.bias, x));
  }
  ad::Var pooled = ad::max_over_points(x);
  ad::Var raw = run_mlp(dec.head, pooled, /*relu_on_last=*/false);
  Eigen::VectorXd factors = Eigen::VectorXd::Ones(cfg.pose_params());
  factors.head(cfg.dim).setConstant(cfg.trans_scale);
  return ad::column_scale(raw, factors);
}

// Value-level decode for inference and evaluation.
inline Pose decode_pose(const PoseDecoder& dec, const PointSet& frame,
                        const RowMatrix& z) {
  if (frame.dim != dec.config.dim)
    throw UsageError("decode_pose: dimension mismatch");
  ad::Graph g;
  BoundDecoder b = bind_decoder(g, dec, 0, false);
  ad::Var pose = decode_pose(b, g.constant(frame.points), g.constant(z));
  const RowMatrix& v = pose.value();
  return Pose::from_params(dec.config.dim,
                           std::span<const double>(v.data(), std::size_t(v.size())));
}

// Poses for every frame of a sequence given its latent chain.
inline std::vector<Pose> decode_all(const PoseDecoder& dec,
                                    const std::vector<PointSet>& frames,
                                    const LatentChain& chain) {
  if (Eigen::Index(frames.size()) != chain.frames())
    throw UsageError("decode_all: frame count != latent count");
  const RowMatrix fused = fuse_latents(chain);
  std::vector<Pose> poses;
  poses.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i)
    poses.push_back(decode_pose(dec, frames[i], fused.row(Eigen::Index(i))));
  return poses;
}

}  // namespace strep
