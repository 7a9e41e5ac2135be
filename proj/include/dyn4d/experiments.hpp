#pragma once

// Pose-under-contamination trials shared by the sweep command and the tests.

#include <cstdint>
#include <string>
#include <vector>

#include "dyn4d/metrics.hpp"
#include "dyn4d/pose_estimation.hpp"
#include "dyn4d/scene_sim.hpp"

namespace dyn4d {

struct PoseTrialSpec {
  SceneConfig scene;          // n_static + n_dynamic is the total point budget
  RansacConfig ransac;
  double dynamic_ratio{0.0};
  double noise_px{0.0};
  MaskMode policy{MaskMode::None};
  std::uint64_t seed{0};      // trial seed; scene, noise and RANSAC streams derive from it
  bool with_ate{true};        // estimate every frame against frame 0 and score the trajectory
};

struct PoseTrialResult {
  bool failed{false};
  std::string failure;
  double rot_err_deg{0.0};        // pair (0, last frame)
  double trans_dir_err_deg{0.0};  // pair (0, last frame)
  double ate{0.0};                // NaN when with_ate is false
  double dynamic_coverage{0.0};   // fraction of dynamic correspondences in the consensus set
  int n_inliers{0};
  int n_correspondences{0};
};

// Scene config for one trial: the point budget split by dynamic_ratio and
// the scene seed derived from the trial seed. Identical for every policy so
// policies compare on paired scenes.
[[nodiscard]] SceneConfig trial_scene(const PoseTrialSpec& spec);

// Never throws for estimation failures; they are reported through `failed`.
[[nodiscard]] PoseTrialResult run_pose_trial(const PoseTrialSpec& spec);

// Coherent object motion, 0.5 px noise, orbit radius 5 and a 3e-3 inlier
// threshold (about two noise sigmas in normalized units).
[[nodiscard]] PoseTrialSpec contamination_scenario(double dynamic_ratio, MaskMode policy);

struct PolicySummary {
  double median_rot_err_deg{0.0};  // failed trials count as +inf
  double median_dynamic_coverage{0.0};
  int n_failed{0};
};

// Runs seeds [0, n_seeds) on the given spec, overriding only the seed.
[[nodiscard]] PolicySummary summarize_trials(PoseTrialSpec spec, int n_seeds);

}  // namespace dyn4d
