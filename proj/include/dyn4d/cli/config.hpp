#pragma once

// Experiment configuration for the command-line front end.
//
// Files are INI-style: "[section]" headers and "key = value" lines, '#' or
// ';' comments. Every key has a default and unknown keys are rejected.
// Lists are comma separated. The full key set is documented in
// docs/formats.md and printed by `dyn4d config`.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dyn4d/gradcheck.hpp"
#include "dyn4d/metrics.hpp"
#include "dyn4d/pose_estimation.hpp"
#include "dyn4d/scene_sim.hpp"

namespace dyn4d::cli {

struct SweepConfig {
  std::vector<double> dynamic_ratios{0.0, 0.1, 0.2, 0.3, 0.4};
  std::vector<double> noises{0.0, 0.5, 1.0};
  std::vector<MaskMode> policies{MaskMode::None, MaskMode::HardExclude, MaskMode::SoftWeight};
  int n_seeds{10};
  bool with_ate{true};
  int threads{0};  // 0: one per hardware thread
};

struct TrajEvalConfig {
  double tolerance{0.02};  // seconds
  bool sample10{false};
  int rpe_delta{1};
};

struct PointsEvalConfig {
  bool use_grid{true};
};

struct ExperimentConfig {
  std::uint64_t seed{42};
  std::string out{"dyn4d_out"};
  std::string pred;  // input file or directory, per subcommand
  std::string gt;
  SceneConfig scene;
  RansacConfig ransac;
  SweepConfig sweep;
  TrajEvalConfig traj;
  DepthEvalConfig depth;
  PointsEvalConfig points;
  GradCheckOptions gradcheck;  // seed comes from `seed`
  std::string inject_fault;  // gradcheck group whose analytic gradient gets corrupted

  ExperimentConfig();

  // Throws ConfigError naming the offending setting.
  void validate() const;
};

// "section.key" -> textual value.
using ConfigMap = std::map<std::string, std::string>;

// Every key with its current value; from_map(to_map(c)) reproduces c exactly.
[[nodiscard]] ConfigMap to_map(const ExperimentConfig& config);

// Starts from the defaults and applies the given entries. Throws ConfigError
// for unknown keys, unparsable values and failed validation.
[[nodiscard]] ExperimentConfig from_map(const ConfigMap& entries);

// Throws ConfigError (syntax, duplicate keys, keys outside a section) or
// IoError.
[[nodiscard]] ConfigMap read_config_file(const std::filesystem::path& path);

[[nodiscard]] std::string to_ini(const ConfigMap& entries);

}  // namespace dyn4d::cli
