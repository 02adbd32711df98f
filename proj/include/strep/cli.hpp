#pragma once

// Command-line front end. run_cli() holds all of the logic so tests can
// drive it in-process; tools/strep.cpp only forwards argv.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 I/O error,
// 3 numeric failure (divergence, failed gradient check).

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "strep/config.hpp"
#include "strep/gradsuite.hpp"
#include "strep/io.hpp"
#include "strep/svg.hpp"

namespace strep::cli {

namespace fs = std::filesystem;

inline constexpr const char* kDatasetExt = ".strepds";

enum ExitCode : int { kOk = 0, kConfig = 1, kIo = 2, kNumeric = 3 };

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out = "out";
  std::optional<std::string> anchor;
  bool no_temporal = false;
  std::optional<double> lambda_global;
  std::optional<int> iters;
};

struct CommandOptions {
  std::vector<std::string> datasets;
  std::string checkpoint;
  std::string poses;
  int gradcheck_seeds = 20;
};

inline std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = std::make_shared<spdlog::logger>(
        "strep", std::make_shared<spdlog::sinks::stderr_sink_st>());
    l->set_pattern("[%l] %v");
    return l;
  }();
  return log;
}

// STREP_LOG=debug|info; anything else (or unset) keeps warnings only.
inline void configure_logging() {
  const char* env = std::getenv("STREP_LOG");
  const std::string level = env ? env : "";
  if (level == "debug") logger()->set_level(spdlog::level::debug);
  else if (level == "info") logger()->set_level(spdlog::level::info);
  else logger()->set_level(spdlog::level::warn);
}

// Expands directories into their dataset files, sorted by name.
inline std::vector<fs::path> dataset_paths(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == kDatasetExt) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      if (found.empty())
        throw IoError("no " + std::string(kDatasetExt) + " files in '" + a + "'");
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

inline std::vector<SequenceDataset> load_datasets(const std::vector<std::string>& args) {
  std::vector<SequenceDataset> data;
  for (const auto& p : dataset_paths(args)) data.push_back(io::load_dataset(p));
  return data;
}

/// Base config (file or dimension defaults) with command-line overrides.
inline RunConfig resolve_config(const CommonOptions& o, std::optional<int> data_dim) {
  RunConfig c = o.config.empty() ? RunConfig::defaults_for(data_dim.value_or(2))
                                 : load_config(o.config);
  if (data_dim && *data_dim != c.dim)
    throw ConfigError("config dim " + std::to_string(c.dim) + " but dataset dim " +
                      std::to_string(*data_dim));
  if (o.seed) c.seed = *o.seed;
  c.train.seed = c.seed;
  c.trajectory.seed = c.seed;
  if (o.threads) c.train.threads = *o.threads;
  if (o.anchor) {
    try {
      c.train.anchor = parse_anchor(*o.anchor);
    } catch (const UsageError& e) {
      throw ConfigError(e.what());
    }
  }
  if (o.no_temporal) c.train.temporal = false;
  if (o.lambda_global) c.train.lambda_global = *o.lambda_global;
  c.validate();
  return c;
}

inline void log_row(const char* what, const HistoryRow& r) {
  std::ostringstream ss;
  ss << what << " iter " << r.iteration << " local " << r.local_loss << " global "
     << r.global_loss << " total " << r.total;
  if (r.ate) ss << " ate " << *r.ate;
  if (r.point_dist) ss << " point_dist " << *r.point_dist;
  logger()->info(ss.str());
}

inline void write_report(const fs::path& dir, const std::string& stem,
                         const EvalReport& r) {
  io::write_file(dir / (stem + ".json"), io::report_json(r).dump(2) + "\n");
  io::write_file(dir / (stem + ".csv"), io::report_csv(r));
}

inline std::string indexed(const std::string& stem, std::size_t i, std::size_t n) {
  if (n == 1) return stem;
  std::ostringstream ss;
  ss << stem << "_" << std::setw(2) << std::setfill('0') << i;
  return ss.str();
}

inline int cmd_simulate(const CommonOptions& o, std::ostream& out) {
  RunConfig c = resolve_config(o, std::nullopt);
  const fs::path dir(o.out);
  std::vector<EnvironmentMap> envs;
  for (const auto& name : c.benchmark.environments) envs.push_back(environment_by_name(name));
  for (const auto& env : envs) io::save_pgm(dir / "maps" / (env.name + ".pgm"), env);

  std::vector<SequenceDataset> data;
  try {
    data = generate_benchmark(envs, c.benchmark.counts, c.trajectory, c.seed);
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  json manifest = {{"generator_version", kGeneratorVersion},
                   {"seed", c.seed},
                   {"maps", json::array()},
                   {"datasets", json::array()}};
  for (const auto& env : envs) manifest["maps"].push_back("maps/" + env.name + ".pgm");
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::ostringstream name;
    name << "data/" << std::setw(2) << std::setfill('0') << i << "_" << data[i].env_name
         << kDatasetExt;
    io::save_dataset(dir / name.str(), data[i]);
    manifest["datasets"].push_back({{"file", name.str()},
                                    {"env_name", data[i].env_name},
                                    {"seed", data[i].seed},
                                    {"num_frames", data[i].size()}});
  }
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  echo_config(dir, c);
  out << "wrote " << data.size() << " datasets and " << envs.size() << " maps to "
      << dir.string() << "\n";
  return kOk;
}

inline int cmd_train(const CommonOptions& o, const CommandOptions& co, std::ostream& out) {
  const std::vector<SequenceDataset> data = load_datasets(co.datasets);
  if (data.empty()) throw ConfigError("train needs at least one --dataset");
  RunConfig c = resolve_config(o, data[0].dim);
  if (o.iters) c.train.iters = *o.iters;
  c.validate();
  for (const auto& ds : data)
    if (ds.dim != c.dim) throw ConfigError("all datasets must share one dimension");

  const fs::path dir(o.out);
  StrepModel model = init_strep_model(c.decoder, c.occupancy_for(data), c.seed,
                                      c.train.temporal);
  TrainResult r = train(data, std::move(model), c.train,
                        [](const HistoryRow& row) { log_row("train", row); });

  io::Checkpoint ck{r.model, {}};
  for (const auto& chain : r.chains) ck.latents.push_back(chain.raw);
  io::save_checkpoint(dir / "checkpoint.strepck", ck);
  io::write_file(dir / "history.csv", io::history_csv(r.history));
  for (std::size_t i = 0; i < data.size(); ++i) {
    io::write_file(dir / (indexed("poses", i, data.size()) + ".csv"),
                   io::encode_poses_csv(r.poses[i]));
    if (data[i].has_gt()) {
      const EvalReport rep =
          evaluate(r.poses[i], *data[i].gt_poses, data[i].frames, c.train.anchor);
      write_report(dir, indexed("report", i, data.size()), rep);
      out << "sequence " << i << " ate " << rep.ate << " point_dist " << rep.point_dist
          << "\n";
    }
  }
  echo_config(dir, c);
  const HistoryRow& last = r.history.back();
  out << "final local_loss " << last.local_loss << " global_loss " << last.global_loss
      << "\n";
  return kOk;
}

inline int cmd_adapt(const CommonOptions& o, const CommandOptions& co, std::ostream& out) {
  if (co.datasets.size() != 1) throw ConfigError("adapt needs exactly one --dataset");
  const SequenceDataset ds = io::load_dataset(co.datasets[0]);
  const io::Checkpoint ck = io::load_checkpoint(co.checkpoint);
  RunConfig c = resolve_config(o, ds.dim);
  if (o.iters) c.adapt.iters = *o.iters;
  if (ck.model.dim() != ds.dim) throw ConfigError("checkpoint and dataset dims differ");

  TrainConfig tc = c.train;
  tc.lr_latent = c.adapt.lr_latent;
  tc.iters = c.adapt.iters;
  StrepModel frozen = ck.model;
  if (o.no_temporal) frozen.temporal = false;
  AdaptResult r = adapt(ds, frozen, tc, [](const HistoryRow& row) { log_row("adapt", row); });

  const fs::path dir(o.out);
  io::write_file(dir / "poses.csv", io::encode_poses_csv(r.poses));
  io::write_file(dir / "history.csv", io::history_csv(r.history));
  if (ds.has_gt()) {
    const EvalReport rep = evaluate(r.poses, *ds.gt_poses, ds.frames, c.train.anchor);
    write_report(dir, "report", rep);
    out << "ate " << rep.ate << " point_dist " << rep.point_dist << "\n";
  }
  echo_config(dir, c);
  out << "local_loss " << r.history.front().local_loss << " -> "
      << r.history.back().local_loss << "\n";
  return kOk;
}

inline int cmd_eval(const CommonOptions& o, const CommandOptions& co, std::ostream& out) {
  if (co.datasets.size() != 1) throw ConfigError("eval needs exactly one --dataset");
  const SequenceDataset ds = io::load_dataset(co.datasets[0]);
  if (!ds.has_gt()) throw ConfigError("eval needs a dataset with ground-truth poses");
  const std::vector<Pose> est = io::decode_poses_csv(io::read_file(co.poses), co.poses);
  RunConfig c = resolve_config(o, ds.dim);
  if (est.size() != ds.size())
    throw IoError(co.poses + ": " + std::to_string(est.size()) + " poses for " +
                  std::to_string(ds.size()) + " frames");
  if (!est.empty() && est[0].dim != ds.dim) throw IoError(co.poses + ": pose dimension mismatch");
  const EvalReport rep = evaluate(est, *ds.gt_poses, ds.frames, c.train.anchor);
  const fs::path dir(o.out);
  write_report(dir, "report", rep);
  echo_config(dir, c);
  out << "ate " << rep.ate << " point_dist " << rep.point_dist << "\n";
  return kOk;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct AblationRow {
  std::uint64_t seed = 0;
  std::string variant;
  double ate = 0.0;
  double point_dist = 0.0;
};

/// Paired runs per seed: temporal fusion against the w = 0 baseline. Without
/// a dataset each seed simulates its own trajectory.
inline std::vector<AblationRow> run_ablation(const RunConfig& c,
                                             const std::optional<SequenceDataset>& fixed) {
  std::vector<AblationRow> rows;
  const EnvironmentMap env = environment_by_name(c.ablate.environment);
  for (int k = 0; k < c.ablate.seeds; ++k) {
    const std::uint64_t seed = c.seed + std::uint64_t(k);
    SequenceDataset ds;
    if (fixed) {
      ds = *fixed;
    } else {
      TrajectorySpec spec = c.trajectory;
      spec.seed = seed;
      ds = simulate_sequence(env, spec);
    }
    if (!ds.has_gt()) throw ConfigError("ablate needs ground-truth poses");
    for (bool temporal : {true, false}) {
      TrainConfig tc = c.train;
      tc.seed = seed;
      tc.temporal = temporal;
      tc.iters = c.ablate.iters.value_or(c.train.iters);
      tc.eval_every = std::max(1, tc.iters);
      const std::vector<SequenceDataset> one{ds};
      StrepModel m = init_strep_model(c.decoder, c.occupancy_for(one), seed, temporal);
      TrainResult r = train(one, std::move(m), tc);
      const EvalReport rep = evaluate(r.poses[0], *ds.gt_poses, ds.frames, tc.anchor);
      rows.push_back({seed, temporal ? "fused" : "no_links", rep.ate, rep.point_dist});
      logger()->info("ablate seed {} {} ate {} point_dist {}", seed, rows.back().variant,
                     rep.ate, rep.point_dist);
    }
  }
  return rows;
}

inline int cmd_ablate(const CommonOptions& o, const CommandOptions& co, std::ostream& out) {
  std::optional<SequenceDataset> fixed;
  if (co.datasets.size() > 1) throw ConfigError("ablate takes at most one --dataset");
  if (co.datasets.size() == 1) fixed = io::load_dataset(co.datasets[0]);
  RunConfig c = resolve_config(o, fixed ? std::optional<int>(fixed->dim) : std::nullopt);
  if (o.iters) c.ablate.iters = *o.iters;
  if (o.no_temporal)
    logger()->warn("--no-temporal ignored: ablate always runs both variants");
  const std::vector<AblationRow> rows = run_ablation(c, fixed);

  std::string csv = "seed,variant,ate,point_dist\n";
  std::vector<double> ate[2], pd[2];
  for (const auto& r : rows) {
    csv += std::to_string(r.seed) + "," + r.variant + "," + io::fmt_double(r.ate) + "," +
           io::fmt_double(r.point_dist) + "\n";
    const int v = r.variant == "fused" ? 0 : 1;
    ate[v].push_back(r.ate);
    pd[v].push_back(r.point_dist);
  }
  const json summary = {
      {"seeds", c.ablate.seeds},
      {"fused", {{"median_ate", median(ate[0])}, {"median_point_dist", median(pd[0])}}},
      {"no_links", {{"median_ate", median(ate[1])}, {"median_point_dist", median(pd[1])}}}};
  const fs::path dir(o.out);
  io::write_file(dir / "summary.csv", csv);
  io::write_file(dir / "summary.json", summary.dump(2) + "\n");
  echo_config(dir, c);
  out << "median ate fused " << median(ate[0]) << " no_links " << median(ate[1]) << "\n"
      << "median point_dist fused " << median(pd[0]) << " no_links " << median(pd[1])
      << "\n";
  return kOk;
}

inline int cmd_gradcheck(const CommonOptions& o, const CommandOptions& co,
                         std::ostream& out) {
  RunConfig c = resolve_config(o, std::nullopt);
  if (co.gradcheck_seeds < 1) throw ConfigError("--seeds must be >= 1");
  const auto results = ad::run_grad_suite(co.gradcheck_seeds, c.seed + 1);
  std::string csv = "case,seeds,failures,worst_rel_error,tolerance,result\n";
  bool all = true;
  out << std::left << std::setw(20) << "case" << std::setw(16) << "worst_rel_err"
      << std::setw(12) << "tolerance" << "result\n";
  for (const auto& r : results) {
    all = all && r.passed();
    out << std::left << std::setw(20) << r.name << std::setw(16) << std::setprecision(3)
        << r.worst_rel_error << std::setw(12) << r.tolerance
        << (r.passed() ? "PASS" : "FAIL") << "\n";
    csv += r.name + "," + std::to_string(r.seeds) + "," + std::to_string(r.failures) +
           "," + io::fmt_double(r.worst_rel_error) + "," + io::fmt_double(r.tolerance) +
           "," + (r.passed() ? "pass" : "fail") + "\n";
  }
  const fs::path dir(o.out);
  io::write_file(dir / "gradcheck.csv", csv);
  echo_config(dir, c);
  out << (all ? "all cases passed" : "gradient check FAILED") << "\n";
  return all ? kOk : kNumeric;
}

inline int cmd_plot(const CommonOptions& o, const CommandOptions& co, std::ostream& out) {
  if (co.datasets.size() != 1) throw ConfigError("plot needs exactly one --dataset");
  const SequenceDataset ds = io::load_dataset(co.datasets[0]);
  RunConfig c = resolve_config(o, ds.dim);
  std::vector<Pose> est;
  if (!co.poses.empty()) {
    est = io::decode_poses_csv(io::read_file(co.poses), co.poses);
  } else if (ds.has_gt()) {
    est = *ds.gt_poses;
  } else {
    throw ConfigError("plot needs --poses for a dataset without ground truth");
  }
  const fs::path dir(o.out);
  io::write_file(dir / "plot.svg", plot_svg(ds, est, c.train.anchor));
  echo_config(dir, c);
  out << "wrote " << (dir / "plot.svg").string() << "\n";
  return kOk;
}

inline void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "JSON run configuration");
  sub->add_option("--seed", o.seed, "random seed");
  sub->add_option("--threads", o.threads, "worker threads for frame-level losses");
  sub->add_option("--out", o.out, "output directory")->capture_default_str();
  sub->add_option("--anchor", o.anchor, "trajectory alignment: first|fit");
  sub->add_flag("--no-temporal", o.no_temporal, "force the latent decay w to zero");
  sub->add_option("--lambda-global", o.lambda_global, "weight of the occupancy loss");
  sub->add_option("--iters", o.iters, "optimisation iterations");
}

/// Parses `args` (without the program name) and runs one subcommand.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out,
                   std::ostream& err) {
  configure_logging();
  CLI::App app{"Sequential registration of 2D/3D scans with temporal latent fusion",
               "strep"};
  app.require_subcommand(1);
  CommonOptions o;
  CommandOptions co;

  auto* sim = app.add_subcommand("simulate", "generate the synthetic benchmark");
  auto* tr = app.add_subcommand("train", "jointly optimise networks and latents");
  auto* adp = app.add_subcommand("adapt", "fit latents of a new sequence to a checkpoint");
  auto* ev = app.add_subcommand("eval", "score a poses file against ground truth");
  auto* ab = app.add_subcommand("ablate", "temporal fusion vs independent latents");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  auto* pl = app.add_subcommand("plot", "SVG of trajectories and stacked scene");
  for (auto* s : {sim, tr, adp, ev, ab, gc, pl}) add_common(s, o);
  tr->add_option("--dataset", co.datasets, "dataset files or directories")->required();
  adp->add_option("--dataset", co.datasets, "held-out dataset")->required();
  adp->add_option("--checkpoint", co.checkpoint, "trained checkpoint")->required();
  ev->add_option("--dataset", co.datasets, "dataset with ground truth")->required();
  ev->add_option("--poses", co.poses, "estimated poses CSV")->required();
  ab->add_option("--dataset", co.datasets, "use this trajectory for every seed");
  gc->add_option("--seeds", co.gradcheck_seeds, "random seeds per case")
      ->capture_default_str();
  pl->add_option("--dataset", co.datasets, "dataset")->required();
  pl->add_option("--poses", co.poses, "estimated poses CSV (default: ground truth)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  }

  try {
    if (sim->parsed()) return cmd_simulate(o, out);
    if (tr->parsed()) return cmd_train(o, co, out);
    if (adp->parsed()) return cmd_adapt(o, co, out);
    if (ev->parsed()) return cmd_eval(o, co, out);
    if (ab->parsed()) return cmd_ablate(o, co, out);
    if (gc->parsed()) return cmd_gradcheck(o, co, out);
    if (pl->parsed()) return cmd_plot(o, co, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kConfig;
  } catch (const GenerationError& e) {
    err << "generation error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  }
  return kConfig;
}

}  // namespace strep::cli
