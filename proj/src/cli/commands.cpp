#include "dyn4d/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/spdlog.h>

#include "dyn4d/error.hpp"
#include "dyn4d/experiments.hpp"
#include "dyn4d/io.hpp"
#include "dyn4d/rng.hpp"

namespace dyn4d::cli {

namespace fs = std::filesystem;

namespace {

class OutputDir {
 public:
  explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir_.string() + ": " + ec.message());
  }

  void write(const std::string& name, const std::string& content, CommandOutcome& outcome) const {
    const fs::path path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    outcome.outputs.push_back(name);
    spdlog::info("wrote {}", path.string());
  }

 private:
  fs::path dir_;
};

std::string num(double v) { return fmt::format("{}", v); }

void require_input(const std::string& value, const char* key) {
  if (value.empty()) throw Error(ErrorCode::ConfigError, fmt::format("{} is required for this command", key));
}

std::string metric_rows(const std::vector<std::pair<std::string, double>>& rows) {
  std::string csv = std::string(kMetricHeader) + "\n";
  for (const auto& [name, value] : rows) csv += fmt::format("{},{}\n", name, value);
  return csv;
}

void print_rows(std::ostream& report, const std::vector<std::pair<std::string, double>>& rows) {
  for (const auto& [name, value] : rows) fmt::print(report, "{:<18} {:.6g}\n", name, value);
}

}  // namespace

CommandOutcome cmd_simulate(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& report) {
  CommandOutcome outcome;
  SceneConfig scene_cfg = config.scene;
  scene_cfg.seed = config.seed;
  const SyntheticScene scene = generate_scene(scene_cfg);
  const std::uint64_t render_seed = Rng::stream(config.seed, 0x72656e646572ULL).next_u64();

  std::ostringstream scene_dump;
  write_scene(scene_dump, scene);
  std::ostringstream dump;
  std::size_t n_corr = 0;
  std::size_t n_dyn = 0;
  for (int f = 1; f < scene.n_frames(); ++f) {
    const FrameObservation obs = render_correspondences(scene, 0, f, scene_cfg.noise_px, render_seed);
    write_correspondences(dump, obs);
    n_corr += obs.correspondences.size();
    n_dyn += static_cast<std::size_t>(
        std::count_if(obs.correspondences.begin(), obs.correspondences.end(), [](const auto& c) { return c.is_dynamic; }));
  }
  const OutputDir dir(out_dir);
  dir.write("scene.txt", scene_dump.str(), outcome);
  dir.write("correspondences.txt", dump.str(), outcome);
  fmt::print(report, "frames {}  static points {}  dynamic tracks {}\n", scene.n_frames(), scene.static_points.size(),
             scene.dynamic_tracks.size());
  fmt::print(report, "frame pairs (0, f): {}  correspondences {}  dynamic {}\n", scene.n_frames() - 1, n_corr, n_dyn);
  return outcome;
}

CommandOutcome cmd_pose_sweep(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& report) {
  CommandOutcome outcome;
  struct Cell {
    PoseTrialSpec spec;
    PoseTrialResult result;
  };
  // Cell order: ratio, noise, policy, seed. Seeds are shared across policies
  // so policies are compared on identical scenes.
  std::vector<Cell> cells;
  for (double ratio : config.sweep.dynamic_ratios) {
    for (double noise : config.sweep.noises) {
      for (MaskMode policy : config.sweep.policies) {
        for (int s = 0; s < config.sweep.n_seeds; ++s) {
          PoseTrialSpec spec;
          spec.scene = config.scene;
          spec.ransac = config.ransac;
          spec.dynamic_ratio = ratio;
          spec.noise_px = noise;
          spec.policy = policy;
          spec.seed = config.seed + static_cast<std::uint64_t>(s);
          spec.with_ate = config.sweep.with_ate;
          cells.push_back({spec, {}});
        }
      }
    }
  }

  const unsigned hw = std::max(1U, std::thread::hardware_concurrency());
  const std::size_t n_threads =
      std::min<std::size_t>(cells.size(), config.sweep.threads > 0 ? static_cast<std::size_t>(config.sweep.threads) : hw);
  spdlog::info("pose-sweep: {} cells on {} threads", cells.size(), n_threads);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) cells[i].result = run_pose_trial(cells[i].spec);
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string csv = std::string(kSweepHeader) + "\n";
  for (const Cell& c : cells) {
    const auto& r = c.result;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    csv += fmt::format("{},{},{},{},{},{},{},{}\n", num(c.spec.dynamic_ratio), num(c.spec.noise_px),
                       to_string(c.spec.policy), c.spec.seed, num(r.failed ? nan : r.rot_err_deg),
                       num(r.failed ? nan : r.trans_dir_err_deg), num(r.failed ? nan : r.ate), r.failed ? 1 : 0);
    if (r.failed) spdlog::debug("trial seed {} failed: {}", c.spec.seed, r.failure);
  }

  std::string summary = std::string(kSweepSummaryHeader) + "\n";
  fmt::print(report, "{:>6} {:>6} {:>6} {:>7} {:>12} {:>12} {:>10} {:>9}\n", "ratio", "noise", "policy", "failed",
             "rot_err_deg", "tdir_err_deg", "ate", "dyn_cov");
  const auto per_group = static_cast<std::size_t>(config.sweep.n_seeds);
  for (std::size_t g = 0; g < cells.size(); g += per_group) {
    std::vector<double> rot;
    std::vector<double> tdir;
    std::vector<double> ate_v;
    std::vector<double> cov;
    int n_failed = 0;
    for (std::size_t i = g; i < g + per_group; ++i) {
      const auto& r = cells[i].result;
      if (r.failed) {
        // Failures count against the policy rather than vanishing from the median.
        ++n_failed;
        rot.push_back(std::numeric_limits<double>::infinity());
        tdir.push_back(std::numeric_limits<double>::infinity());
        ate_v.push_back(std::numeric_limits<double>::infinity());
        continue;
      }
      rot.push_back(r.rot_err_deg);
      tdir.push_back(r.trans_dir_err_deg);
      ate_v.push_back(r.ate);
      cov.push_back(r.dynamic_coverage);
    }
    const PoseTrialSpec& s = cells[g].spec;
    const double m_rot = median(rot);
    const double m_tdir = median(tdir);
    const double m_ate = config.sweep.with_ate ? median(ate_v) : std::numeric_limits<double>::quiet_NaN();
    const double m_cov = median(cov);
    summary += fmt::format("{},{},{},{},{},{},{},{},{}\n", num(s.dynamic_ratio), num(s.noise_px), to_string(s.policy),
                           per_group, n_failed, num(m_rot), num(m_tdir), num(m_ate), num(m_cov));
    fmt::print(report, "{:>6} {:>6} {:>6} {:>7} {:>12.5g} {:>12.5g} {:>10.5g} {:>9.3g}\n", s.dynamic_ratio,
               s.noise_px, to_string(s.policy), n_failed, m_rot, m_tdir, m_ate, m_cov);
  }

  const OutputDir dir(out_dir);
  dir.write("pose_sweep.csv", csv, outcome);
  dir.write("pose_sweep_summary.csv", summary, outcome);
  return outcome;
}

CommandOutcome cmd_eval_traj(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& report) {
  CommandOutcome outcome;
  require_input(config.pred, "input.pred");
  require_input(config.gt, "input.gt");
  outcome.inputs = {config.pred, config.gt};
  const Trajectory pred = read_trajectory_file(config.pred);
  const Trajectory gt = read_trajectory_file(config.gt);
  auto [p, g] = associate(pred, gt, config.traj.tolerance);
  const std::size_t n_matched = p.size();
  if (config.traj.sample10) {
    const auto idx = sample_frames(n_matched, 10);
    p = subset(p, idx);
    g = subset(g, idx);
  }
  const RelativePoseError r = rpe(p, g, static_cast<std::size_t>(config.traj.rpe_delta));
  const std::vector<std::pair<std::string, double>> rows{
      {"ate", ate(p, g)},
      {"rpe_trans", r.trans},
      {"rpe_rot_deg", r.rot_deg},
      {"n_matched", static_cast<double>(n_matched)},
      {"n_evaluated", static_cast<double>(p.size())},
  };
  OutputDir(out_dir).write("traj_metrics.csv", metric_rows(rows), outcome);
  print_rows(report, rows);
  return outcome;
}

namespace {

std::vector<fs::path> pfm_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pfm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::IoError, "no .pfm files in " + dir.string());
  return files;
}

}  // namespace

CommandOutcome cmd_eval_depth(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& report) {
  CommandOutcome outcome;
  require_input(config.pred, "input.pred");
  require_input(config.gt, "input.gt");
  const auto pred_files = pfm_files(config.pred);
  const auto gt_files = pfm_files(config.gt);
  std::vector<DepthMap> pred;
  std::vector<DepthMap> gt;
  std::vector<ValidMask> valid;
  if (pred_files.size() != gt_files.size()) {
    throw Error(ErrorCode::ShapeMismatch, fmt::format("{} predicted maps but {} ground-truth maps", pred_files.size(),
                                                      gt_files.size()));
  }
  for (std::size_t i = 0; i < pred_files.size(); ++i) {
    if (pred_files[i].filename() != gt_files[i].filename()) {
      throw Error(ErrorCode::ShapeMismatch, "file lists differ: " + pred_files[i].filename().string() + " vs " +
                                                gt_files[i].filename().string());
    }
    outcome.inputs.push_back(pred_files[i]);
    outcome.inputs.push_back(gt_files[i]);
    pred.push_back(read_pfm_file(pred_files[i]));
    gt.push_back(read_pfm_file(gt_files[i]));
    if (pred.back().width != gt.back().width || pred.back().height != gt.back().height) {
      throw Error(ErrorCode::ShapeMismatch,
                  fmt::format("{}: predicted map is {}x{}, ground truth is {}x{}", pred_files[i].filename().string(),
                              pred.back().width, pred.back().height, gt.back().width, gt.back().height));
    }
    valid.push_back(positive_mask(gt.back()));
  }
  const DepthEvaluation eval = evaluate_depth(pred, gt, valid, config.depth);

  std::string csv = std::string(kDepthHeader) + "\n";
  fmt::print(report, "alignment {}\n{:<24} {:>10} {:>10} {:>10} {:>10}\n", to_string(config.depth.alignment), "frame",
             "scale", "shift", "abs_rel", "delta_acc");
  for (std::size_t i = 0; i < pred_files.size(); ++i) {
    const std::string frame = pred_files[i].stem().string();
    const auto& a = eval.alignment[i];
    const auto& s = eval.per_frame[i];
    csv += fmt::format("{},{},{},{},{},{}\n", frame, num(a.scale), num(a.shift), num(s.abs_rel), num(s.delta_acc),
                       s.n_valid);
    fmt::print(report, "{:<24} {:>10.5g} {:>10.5g} {:>10.5g} {:>10.5g}\n", frame, a.scale, a.shift, s.abs_rel,
               s.delta_acc);
  }
  csv += fmt::format("all,,,{},{},{}\n", num(eval.aggregate.abs_rel), num(eval.aggregate.delta_acc),
                     eval.aggregate.n_valid);
  fmt::print(report, "{:<24} {:>10} {:>10} {:>10.5g} {:>10.5g}\n", "all", "", "", eval.aggregate.abs_rel,
             eval.aggregate.delta_acc);
  OutputDir(out_dir).write("depth_metrics.csv", csv, outcome);
  return outcome;
}

CommandOutcome cmd_eval_points(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& report) {
  CommandOutcome outcome;
  require_input(config.pred, "input.pred");
  require_input(config.gt, "input.gt");
  outcome.inputs = {config.pred, config.gt};
  const auto pred = read_ply_file(config.pred);
  const auto gt = read_ply_file(config.gt);
  const PointCloudScores s = pointcloud_metrics(pred, gt, config.points.use_grid);
  const std::vector<std::pair<std::string, double>> rows{
      {"acc_mean", s.acc_mean},         {"acc_median", s.acc_median},         {"comp_mean", s.comp_mean},
      {"comp_median", s.comp_median},   {"overall_mean", s.overall_mean},     {"overall_median", s.overall_median},
  };
  OutputDir(out_dir).write("points_metrics.csv", metric_rows(rows), outcome);
  print_rows(report, rows);
  return outcome;
}

CommandOutcome cmd_gradcheck(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& report) {
  CommandOutcome outcome;
  bool fault_applied = false;
  GradientTamper tamper;
  if (!config.inject_fault.empty()) {
    tamper = [&](const std::string& group, std::vector<double>& analytic) {
      if (group != config.inject_fault || analytic.empty()) return;
      analytic[0] += 1e-3 * (1.0 + std::abs(analytic[0]));
      fault_applied = true;
    };
  }
  GradCheckOptions options = config.gradcheck;
  options.seed = config.seed;
  const GradCheckReport result = run_gradcheck(options, tamper);
  if (!config.inject_fault.empty() && !fault_applied) {
    throw Error(ErrorCode::ConfigError, "gradcheck.inject_fault: no group named '" + config.inject_fault + "'");
  }
  std::string csv = std::string(kGradcheckHeader) + "\n";
  for (const GroupResult& g : result.groups) {
    csv += fmt::format("{},{},{},{}\n", g.name, num(g.max_rel_error), g.n_entries, g.passed ? 1 : 0);
    fmt::print(report, "{:<4} {:<40} {:.3e} ({} entries)\n", g.passed ? "PASS" : "FAIL", g.name, g.max_rel_error,
               g.n_entries);
  }
  const auto n_failed = std::count_if(result.groups.begin(), result.groups.end(), [](const auto& g) { return !g.passed; });
  fmt::print(report, "{} groups, {} failed, tolerance {:g}, {} configurations\n", result.groups.size(), n_failed,
             config.gradcheck.tolerance, config.gradcheck.n_configs);
  OutputDir(out_dir).write("gradcheck.csv", csv, outcome);
  outcome.exit_code = result.passed() ? kExitOk : kExitAssertion;
  return outcome;
}

}  // namespace dyn4d::cli
