// End-to-end acceptance run: one PASS/FAIL line per criterion. Exits
// non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "strep/cli.hpp"

using namespace strep;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int precision = 4) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

RowMatrix random_cloud(Eigen::Index n, int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  RowMatrix m(n, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Pose random_pose(int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> t(-80.0, 80.0), a(-std::numbers::pi, std::numbers::pi),
      pitch(-1.3, 1.3);
  if (dim == 2) return Pose::planar(t(rng), t(rng), a(rng));
  return Pose::spatial(Eigen::Vector3d(t(rng), t(rng), t(rng)), a(rng), pitch(rng), a(rng));
}

SequenceDataset sequence(const EnvironmentMap& env, std::uint64_t seed) {
  TrajectorySpec spec = RunConfig::defaults_for(2).trajectory;
  spec.seed = seed;
  return simulate_sequence(env, spec);
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const auto results = ad::run_grad_suite(20, 1);
  const double secs = seconds_since(t0);
  Outcome o{secs < 60.0, ""};
  double worst_ratio = 0.0;
  for (const auto& r : results) {
    if (!r.passed()) {
      o.pass = false;
      o.detail += r.name + " failed " + std::to_string(r.failures) + "/20; ";
    }
    worst_ratio = std::max(worst_ratio, r.worst_rel_error / r.tolerance);
  }
  o.detail += std::to_string(results.size()) + " cases x 20 seeds, worst error/tolerance " +
              num(worst_ratio, 3) + ", " + num(secs, 3) + " s";
  return o;
}

double brute_chamfer(const RowMatrix& a, const RowMatrix& b) {
  auto one_way = [](const RowMatrix& x, const RowMatrix& y) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      total += (y.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff();
    return total;
  };
  return one_way(a, b) + one_way(b, a);
}

Outcome chamfer_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> size(1, 256);
  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const int dim = i % 2 ? 3 : 2;
    const RowMatrix a = random_cloud(size(rng), dim, rng), b = random_cloud(size(rng), dim, rng);
    mismatches += chamfer(a, b, NeighborSearch::kKdTree) != brute_chamfer(a, b);
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          std::to_string(mismatches) + "/100 mismatches, " + num(secs, 3) + " s"};
}

Outcome latent_closed_form() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  std::uniform_int_distribution<int> len(1, 32);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    LatentChain c = make_latents(len(rng), 16, rng);
    for (Eigen::Index d = 0; d < 16; ++d) c.decay(0, d) = w(rng);
    const RowMatrix fused = fuse_latents(c);
    for (Eigen::Index k = 0; k < c.frames(); ++k)
      for (Eigen::Index d = 0; d < 16; ++d) {
        double z = 0.0;
        for (Eigen::Index j = 0; j <= k; ++j) z += std::pow(c.decay(0, d), double(k - j)) * c.raw(j, d);
        worst = std::max(worst, std::abs(fused(k, d) - z));
      }
  }
  return {worst < 1e-12, "max deviation " + num(worst, 3) + " over 50 chains"};
}

Outcome gauge_invariance() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = trial % 2 ? 3 : 2;
    std::vector<Pose> gt, est;
    std::vector<PointSet> frames;
    for (int i = 0; i < 16; ++i) {
      Pose p = random_pose(dim, rng);
      gt.push_back(p);
      for (int d = 0; d < dim; ++d) p.translation[d] += noise(rng);
      p.rotation[0] += 0.05 * noise(rng);
      est.push_back(p);
      frames.emplace_back(dim, random_cloud(20, dim, rng));
    }
    const auto moved = apply_alignment(random_pose(dim, rng), est);
    worst = std::max(worst, std::abs(ate(moved, gt) - ate(est, gt)));
    worst = std::max(worst, std::abs(point_distance(moved, gt, frames) -
                                     point_distance(est, gt, frames)));
  }
  return {worst < 1e-9, "max change " + num(worst, 3) + " over 20 trials"};
}

Outcome geometry_laws() {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int dim : {2, 3}) {
    for (int i = 0; i < 1000; ++i) {
      const Pose a = random_pose(dim, rng), b = random_pose(dim, rng);
      const Eigen::VectorXd x = random_cloud(1, dim, rng).row(0).transpose();
      const Eigen::VectorXd y = random_cloud(1, dim, rng).row(0).transpose();
      const Eigen::MatrixXd r = a.rotation_matrix();
      worst = std::max({worst,
                        std::abs((apply_pose(a, x) - apply_pose(a, y)).norm() - (x - y).norm()),
                        (r.transpose() * r - Eigen::MatrixXd::Identity(dim, dim)).cwiseAbs().maxCoeff(),
                        std::abs(r.determinant() - 1.0),
                        (apply_pose(compose(a, b), x) - apply_pose(a, apply_pose(b, x))).norm(),
                        (apply_pose(inverse(a), apply_pose(a, x)) - x).norm(),
                        (apply_pose(compose(a, inverse(a)), x) - x).norm()});
    }
  }
  return {worst < 1e-9, "max violation " + num(worst, 3) + " over 1000 samples per dim"};
}

Outcome registration_2d() {
  const RunConfig c = RunConfig::defaults_for(2);
  const EnvironmentMap env = corridor_loop_map();
  int within = 0, improved = 0;
  double slowest = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t0 = Clock::now();
    const SequenceDataset ds = sequence(env, seed);
    TrainConfig tc = c.train;
    tc.seed = seed;
    tc.eval_every = tc.iters;
    const std::vector<SequenceDataset> one{ds};
    const TrainResult r = train(one, init_strep_model(c.decoder, c.occupancy_for(one), seed), tc);
    const double final_ate = ate(r.poses[0], *ds.gt_poses, tc.anchor);
    const double identity_ate =
        ate(std::vector<Pose>(ds.size(), Pose::identity(2)), *ds.gt_poses, tc.anchor);
    const double secs = seconds_since(t0);
    slowest = std::max(slowest, secs);
    within += final_ate <= 10.0;
    improved += final_ate <= 0.2 * identity_ate;
    per_seed += " s" + std::to_string(seed) + " " + num(final_ate, 3) + "/" + num(identity_ate, 3);
  }
  return {within >= 4 && improved == 5 && slowest <= 600.0,
          "ATE<=10 on " + std::to_string(within) + "/5, >=80% better on " +
              std::to_string(improved) + "/5, slowest " + num(slowest, 3) +
              " s; final/identity:" + per_seed};
}

Outcome ablation_direction() {
  const auto t0 = Clock::now();
  RunConfig c = RunConfig::defaults_for(2);
  c.seed = 1;
  c.ablate.seeds = 5;
  c.ablate.environment = "cluttered_hall";
  const auto rows = cli::run_ablation(c, std::nullopt);
  std::vector<double> ate[2], pd[2];
  for (const auto& r : rows) {
    const int v = r.variant == "fused" ? 0 : 1;
    ate[v].push_back(r.ate);
    pd[v].push_back(r.point_dist);
  }
  const double fa = cli::median(ate[0]), na = cli::median(ate[1]);
  const double fp = cli::median(pd[0]), np = cli::median(pd[1]);
  const double secs = seconds_since(t0);
  return {fa <= na && fp <= np && secs <= 3600.0,
          "median ATE fused " + num(fa) + " vs no_links " + num(na) + ", median point_dist " +
              num(fp) + " vs " + num(np) + ", " + num(secs, 4) + " s"};
}

Outcome test_time_adaptation() {
  const RunConfig c = RunConfig::defaults_for(2);
  const EnvironmentMap env = corridor_loop_map();
  const SequenceDataset train_seq = sequence(env, 1), held_out = sequence(env, 2);
  TrainConfig tc = c.train;
  tc.seed = 1;
  tc.eval_every = tc.iters;
  const std::vector<SequenceDataset> one{train_seq};
  const TrainResult trained = train(one, init_strep_model(c.decoder, c.occupancy_for(one), 1), tc);

  const StrepModel& frozen = trained.model;
  const std::string before = io::encode_checkpoint({frozen, {}});
  TrainConfig ac = tc;
  ac.seed = 2;
  ac.lr_latent = c.adapt.lr_latent;
  ac.iters = c.adapt.iters;
  ac.eval_every = ac.iters;
  const AdaptResult a = adapt(held_out, frozen, ac);
  const bool unchanged = io::encode_checkpoint({frozen, {}}) == before;
  const double first = a.history.front().local_loss, last = a.history.back().local_loss;
  const double reduction = 1.0 - last / first;
  return {reduction >= 0.5 && unchanged,
          "local_loss " + num(first, 5) + " -> " + num(last, 5) + " (" +
              num(100.0 * reduction, 3) + "% lower), frozen parameters " +
              (unchanged ? "bit-identical" : "CHANGED")};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  return out;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "strep_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  // Short runs: the check is byte equality, not quality.
  io::write_file(root / "short.json", R"({"seed": 7, "train": {"iters": 6, "eval_every": 3},
    "ablate": {"seeds": 2, "iters": 3}, "adapt": {"iters": 4}})");
  const std::string cfg = (root / "short.json").string();
  const std::string data = (root / "sim_a" / "data" / "00_corridor_loop.strepds").string();
  const std::string held = (root / "sim_a" / "data" / "01_corridor_loop.strepds").string();

  const std::vector<std::pair<std::string, std::vector<std::string>>> commands = {
      {"sim", {"simulate", "--config", cfg}},
      {"train", {"train", "--config", cfg, "--dataset", data}},
      {"adapt",
       {"adapt", "--config", cfg, "--dataset", held, "--checkpoint",
        (root / "train_a" / "checkpoint.strepck").string()}},
      {"eval", {"eval", "--dataset", data, "--poses", (root / "train_a" / "poses.csv").string()}},
      {"ablate", {"ablate", "--config", cfg}},
      {"gradcheck", {"gradcheck", "--config", cfg, "--seeds", "2"}},
      {"plot", {"plot", "--dataset", data, "--poses", (root / "train_a" / "poses.csv").string()}},
  };
  std::string differing;
  for (const auto& [name, args] : commands) {
    for (const char* run : {"_a", "_b"}) {
      std::vector<std::string> full = args;
      full.insert(full.end(), {"--threads", "1", "--out", (root / (name + run)).string()});
      std::ostringstream out, err;
      const int code = cli::run_cli(full, out, err);
      if (code != 0) return {false, name + " exited with " + std::to_string(code) + ": " + err.str()};
    }
    if (tree_bytes(root / (name + "_a")) != tree_bytes(root / (name + "_b"))) differing += " " + name;
  }
  fs::remove_all(root);
  return {differing.empty(), differing.empty()
                                 ? "7 commands rerun with byte-identical outputs"
                                 : "outputs differ for:" + differing};
}

Outcome occupancy_sanity() {
  const RunConfig c = RunConfig::defaults_for(2);
  const EnvironmentMap env = corridor_loop_map();
  const double zero_loss = 2.0 * std::numbers::ln2;
  int ok = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SequenceDataset ds = sequence(env, seed);
    // Scenes are expressed relative to the first ground-truth pose, the same
    // gauge a training run starts from.
    const Pose to_first = inverse(ds.gt_poses->front());
    std::mt19937_64 rng(100 + seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    GlobalScene gt{2, {}}, perturbed{2, {}};
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const Pose p = compose(to_first, (*ds.gt_poses)[i]);
      gt.frames.push_back(apply_pose(p, ds.frames[i]));
      Pose q = p;
      const double a = angle(rng);
      q.translation += 30.0 * Eigen::Vector2d(std::cos(a), std::sin(a));
      perturbed.frames.push_back(apply_pose(q, ds.frames[i]));
    }
    const std::vector<SequenceDataset> one{ds};
    const OccupancyConfig oc = c.occupancy_for(one);
    std::mt19937_64 init(seed);
    const OccupancyNet net = make_occupancy_net(oc, init);
    TrainConfig tc = c.train;
    tc.seed = seed;
    const OccupancyFit fit_gt = fit_occupancy(gt, net, 200, tc);
    const OccupancyFit fit_pert = fit_occupancy(perturbed, net, 200, tc);
    const double zero = global_loss(gt, zero_occupancy_net(oc), tc.s_per_beam, seed);
    const double lg = global_loss(gt, fit_gt.net, tc.s_per_beam, seed);
    const double lp = global_loss(perturbed, fit_pert.net, tc.s_per_beam, seed);
    const bool pass = std::abs(zero - zero_loss) < 1e-12 && lg <= 0.5 * zero_loss && lg < lp;
    ok += pass;
    per_seed += " s" + std::to_string(seed) + " " + num(lg, 3) + "/" + num(lp, 3);
  }
  return {ok == 5, std::to_string(ok) + "/5 seeds reach <= ln2 with GT below perturbed; gt/perturbed:" +
                       per_seed};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"chamfer oracle equivalence", chamfer_oracle},
      {"latent recurrence closed form", latent_closed_form},
      {"gauge invariance", gauge_invariance},
      {"geometry laws", geometry_laws},
      {"desk-scale 2D registration", registration_2d},
      {"ablation direction", ablation_direction},
      {"test-time adaptation", test_time_adaptation},
      {"determinism", determinism},
      {"occupancy-loss sanity", occupancy_sanity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first
              << ": " << o.detail << " [" << num(seconds_since(t0), 4) << " s]" << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed ? 1 : 0;
}
