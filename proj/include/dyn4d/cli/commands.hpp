#pragma once

// Subcommand bodies. Each writes its primary outputs into `out_dir`, prints a
// human-readable report to `report`, and returns what it read and wrote so
// the caller can build the manifest. Library errors propagate as dyn4d::Error.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dyn4d/cli/config.hpp"
#include "dyn4d/gradcheck.hpp"

namespace dyn4d::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitAssertion = 3 };

struct CommandOutcome {
  int exit_code{kExitOk};
  std::vector<std::filesystem::path> inputs;
  std::vector<std::string> outputs;  // relative to out_dir, in write order
};

// Column orders are part of the output contract.
inline constexpr const char* kSweepHeader = "dynamic_ratio,noise,policy,seed,rot_err_deg,trans_dir_err_deg,ate,failed";
inline constexpr const char* kSweepSummaryHeader =
    "dynamic_ratio,noise,policy,n_trials,n_failed,median_rot_err_deg,median_trans_dir_err_deg,median_ate,"
    "median_dynamic_coverage";
inline constexpr const char* kDepthHeader = "frame,scale,shift,abs_rel,delta_acc,n_valid";
inline constexpr const char* kMetricHeader = "metric,value";
inline constexpr const char* kGradcheckHeader = "group,max_rel_error,n_entries,passed";

CommandOutcome cmd_simulate(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& report);
CommandOutcome cmd_pose_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& report);
CommandOutcome cmd_eval_traj(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& report);
CommandOutcome cmd_eval_depth(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& report);
CommandOutcome cmd_eval_points(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& report);
// Exit code kExitAssertion when any group fails. config.inject_fault adds a
// fault to the named group's analytic gradient; ConfigError when no group has
// that name.
CommandOutcome cmd_gradcheck(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& report);

}  // namespace dyn4d::cli
