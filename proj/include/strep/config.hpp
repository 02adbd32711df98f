#pragma once

// Run configuration shared by every command. Stored as JSON; a user file
// only lists the keys it overrides and unknown keys are rejected.

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "strep/io.hpp"
#include "strep/trainer.hpp"

namespace strep {

struct BenchmarkConfig {
  std::vector<std::string> environments = {"corridor_loop", "two_room_office",
                                           "cluttered_hall"};
  std::vector<int> counts = {7, 7, 6};
};

struct AblateConfig {
  int seeds = 5;
  std::string environment = "cluttered_hall";
  // Iterations per run; unset uses train.iters.
  std::optional<int> iters;
};

struct AdaptConfig {
  // Learning rate of the fresh latents during adaptation.
  double lr_latent = 0.2;
  int iters = 400;
};

struct RunConfig {
  int dim = 2;
  std::uint64_t seed = 0;
  TrainConfig train;
  DecoderConfig decoder;
  std::vector<int> occupancy_hidden = {64, 256, 512, 256, 128};
  // Occupancy input scale per axis; unset derives it from the data.
  std::optional<std::vector<double>> world_extent;
  TrajectorySpec trajectory;
  BenchmarkConfig benchmark;
  AblateConfig ablate;
  AdaptConfig adapt;

  static RunConfig defaults_for(int dim) {
    check_dim(dim);
    RunConfig c;
    c.dim = dim;
    c.train = TrainConfig::defaults_for(dim);
    c.decoder = DecoderConfig::defaults_for(dim);
    return c;
  }

  OccupancyConfig occupancy_for(const std::vector<SequenceDataset>& data) const {
    OccupancyConfig o;
    o.dim = dim;
    o.hidden = occupancy_hidden;
    if (world_extent) {
      o.world_extent = Eigen::Map<const Eigen::VectorXd>(
          world_extent->data(), Eigen::Index(world_extent->size()));
    } else {
      o.world_extent = auto_world_extent(data);
    }
    return o;
  }

  void validate() const {
    check_dim(dim);
    try {
      train.validate();
      trajectory.validate();
    } catch (const UsageError& e) {
      throw ConfigError(e.what());
    }
    if (decoder.dim != dim) throw ConfigError("model dim must equal dim");
    if (decoder.latent_dim < 1) throw ConfigError("model.latent_dim must be >= 1");
    if (decoder.kernel_width < 1 || decoder.kernel_width % 2 == 0)
      throw ConfigError("model.kernel_width must be a positive odd integer");
    if (!(decoder.trans_scale > 0.0)) throw ConfigError("model.trans_scale must be > 0");
    for (int w : decoder.point_widths)
      if (w < 1) throw ConfigError("model.point_widths entries must be >= 1");
    for (int w : decoder.head_widths)
      if (w < 1) throw ConfigError("model.head_widths entries must be >= 1");
    for (int w : occupancy_hidden)
      if (w < 1) throw ConfigError("model.occupancy_hidden entries must be >= 1");
    if (world_extent) {
      if (int(world_extent->size()) != dim)
        throw ConfigError("model.world_extent needs one entry per axis");
      for (double v : *world_extent)
        if (!(v > 0.0)) throw ConfigError("model.world_extent entries must be > 0");
    }
    if (benchmark.environments.size() != benchmark.counts.size())
      throw ConfigError("benchmark.counts needs one entry per environment");
    for (int n : benchmark.counts)
      if (n < 0) throw ConfigError("benchmark.counts entries must be >= 0");
    if (ablate.seeds < 1) throw ConfigError("ablate.seeds must be >= 1");
    if (ablate.iters && *ablate.iters < 0) throw ConfigError("ablate.iters must be >= 0");
    if (!(adapt.lr_latent > 0.0)) throw ConfigError("adapt.lr_latent must be > 0");
    if (adapt.iters < 0) throw ConfigError("adapt.iters must be >= 0");
  }
};

inline EnvironmentMap environment_by_name(const std::string& name) {
  for (auto& env : default_environments())
    if (env.name == name) return env;
  throw ConfigError("unknown environment '" + name +
                    "' (expected corridor_loop, two_room_office or cluttered_hall)");
}

using nlohmann::json;

inline json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  const TrajectorySpec& s = c.trajectory;
  return json{
      {"dim", c.dim},
      {"seed", c.seed},
      {"train",
       {{"lr_net", t.lr_net},
        {"lr_latent", t.lr_latent},
        {"iters", t.iters},
        {"batch_frames", t.batch_frames},
        {"lambda_global", t.lambda_global},
        {"s_per_beam", t.s_per_beam},
        {"neighbor_radius", t.neighbor_radius},
        {"eval_every", t.eval_every},
        {"threads", t.threads},
        {"temporal", t.temporal},
        {"clip_norm", t.clip_norm},
        {"occupancy_queries", t.occupancy_queries},
        {"anchor", anchor_name(t.anchor)}}},
      {"model",
       {{"latent_dim", c.decoder.latent_dim},
        {"kernel_width", c.decoder.kernel_width},
        {"trans_scale", c.decoder.trans_scale},
        {"point_widths", c.decoder.point_widths},
        {"head_widths", c.decoder.head_widths},
        {"head_init_scale", c.decoder.head_init_scale},
        {"occupancy_hidden", c.occupancy_hidden},
        {"world_extent", c.world_extent ? json(*c.world_extent) : json(nullptr)}}},
      {"trajectory",
       {{"num_frames", s.num_frames},
        {"rot_range", s.rot_range},
        {"trans_min", s.trans_min},
        {"trans_max", s.trans_max},
        {"beams", s.beams},
        {"fov", s.fov},
        {"max_range", s.max_range},
        {"start_clearance", s.start_clearance},
        {"range_noise", s.range_noise}}},
      {"benchmark",
       {{"environments", c.benchmark.environments}, {"counts", c.benchmark.counts}}},
      {"ablate",
       {{"seeds", c.ablate.seeds},
        {"environment", c.ablate.environment},
        {"iters", c.ablate.iters ? json(*c.ablate.iters) : json(nullptr)}}},
      {"adapt", {{"lr_latent", c.adapt.lr_latent}, {"iters", c.adapt.iters}}}};
}

namespace detail {

// Every key of `user` must exist in `schema`; objects are checked
// recursively. Keys whose default is null accept any value.
inline void reject_unknown(const json& user, const json& schema,
                           const std::string& path) {
  if (!user.is_object()) throw ConfigError("'" + path + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    const json& def = schema.at(it.key());
    if (def.is_object()) reject_unknown(it.value(), def, key);
  }
}

template <class T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid value for '") + section + "." + key +
                      "' (" + e.what() + ")");
  }
}

}  // namespace detail

/// Resolves a user config: dimension-dependent defaults, then the user's
/// overrides. Throws ConfigError on unknown keys or ill-typed values.
inline RunConfig config_from_json(const json& user) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  int dim = 2;
  if (user.contains("dim")) {
    if (!user.at("dim").is_number_integer()) throw ConfigError("'dim' must be 2 or 3");
    dim = user.at("dim").get<int>();
  }
  if (dim != 2 && dim != 3) throw ConfigError("'dim' must be 2 or 3");
  const json defaults = to_json(RunConfig::defaults_for(dim));
  detail::reject_unknown(user, defaults, "");
  json j = defaults;
  j.merge_patch(user);
  // merge_patch drops keys set to null; restore them so lookups succeed.
  for (const char* k : {"world_extent"})
    if (!j["model"].contains(k)) j["model"][k] = nullptr;
  if (!j["ablate"].contains("iters")) j["ablate"]["iters"] = nullptr;

  RunConfig c = RunConfig::defaults_for(dim);
  using detail::get;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw ConfigError("'seed' must be a non-negative integer");
  }
  TrainConfig& t = c.train;
  t.lr_net = get<double>(j, "train", "lr_net");
  t.lr_latent = get<double>(j, "train", "lr_latent");
  t.iters = get<int>(j, "train", "iters");
  t.batch_frames = get<int>(j, "train", "batch_frames");
  t.lambda_global = get<double>(j, "train", "lambda_global");
  t.s_per_beam = get<int>(j, "train", "s_per_beam");
  t.neighbor_radius = get<int>(j, "train", "neighbor_radius");
  t.eval_every = get<int>(j, "train", "eval_every");
  t.threads = get<int>(j, "train", "threads");
  t.temporal = get<bool>(j, "train", "temporal");
  t.clip_norm = get<double>(j, "train", "clip_norm");
  t.occupancy_queries = get<int>(j, "train", "occupancy_queries");
  try {
    t.anchor = parse_anchor(get<std::string>(j, "train", "anchor"));
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  t.seed = c.seed;

  DecoderConfig& d = c.decoder;
  d.latent_dim = get<int>(j, "model", "latent_dim");
  d.kernel_width = get<int>(j, "model", "kernel_width");
  d.trans_scale = get<double>(j, "model", "trans_scale");
  d.point_widths = get<std::vector<int>>(j, "model", "point_widths");
  d.head_widths = get<std::vector<int>>(j, "model", "head_widths");
  d.head_init_scale = get<double>(j, "model", "head_init_scale");
  c.occupancy_hidden = get<std::vector<int>>(j, "model", "occupancy_hidden");
  if (!j["model"]["world_extent"].is_null())
    c.world_extent = get<std::vector<double>>(j, "model", "world_extent");

  TrajectorySpec& s = c.trajectory;
  s.num_frames = get<int>(j, "trajectory", "num_frames");
  s.rot_range = get<double>(j, "trajectory", "rot_range");
  s.trans_min = get<double>(j, "trajectory", "trans_min");
  s.trans_max = get<double>(j, "trajectory", "trans_max");
  s.beams = get<int>(j, "trajectory", "beams");
  s.fov = get<double>(j, "trajectory", "fov");
  s.max_range = get<double>(j, "trajectory", "max_range");
  s.start_clearance = get<double>(j, "trajectory", "start_clearance");
  s.range_noise = get<double>(j, "trajectory", "range_noise");
  s.seed = c.seed;

  c.benchmark.environments = get<std::vector<std::string>>(j, "benchmark", "environments");
  c.benchmark.counts = get<std::vector<int>>(j, "benchmark", "counts");
  c.ablate.seeds = get<int>(j, "ablate", "seeds");
  c.ablate.environment = get<std::string>(j, "ablate", "environment");
  if (!j["ablate"]["iters"].is_null()) c.ablate.iters = get<int>(j, "ablate", "iters");
  c.adapt.lr_latent = get<double>(j, "adapt", "lr_latent");
  c.adapt.iters = get<int>(j, "adapt", "iters");
  c.validate();
  return c;
}

inline RunConfig parse_config(const std::string& text, const std::string& what = "config") {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": " + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& p) {
  return parse_config(io::read_file(p), p.string());
}

// Resolved config as written into output directories.
inline std::string config_text(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline void echo_config(const std::filesystem::path& dir, const RunConfig& c) {
  io::write_file(dir / "config.json", config_text(c));
}

}  // namespace strep
