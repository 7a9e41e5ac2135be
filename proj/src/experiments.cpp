#include "dyn4d/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dyn4d/error.hpp"
#include "dyn4d/metrics.hpp"
#include "dyn4d/rng.hpp"

namespace dyn4d {
namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

std::vector<double> weights_for(MaskMode mode, const std::vector<Correspondence>& corr) {
  if (mode == MaskMode::None) return {};
  return ground_truth_weights(corr);
}

MaskPolicy policy_for(MaskMode mode, const std::vector<Correspondence>& corr) {
  MaskPolicy p;
  p.mode = mode;
  if (mode != MaskMode::None) p.weights = weights_for(mode, corr);
  return p;
}

}  // namespace

SceneConfig trial_scene(const PoseTrialSpec& spec) {
  SceneConfig cfg = spec.scene;
  const int total = spec.scene.n_static + spec.scene.n_dynamic;
  cfg.n_dynamic = static_cast<int>(std::lround(spec.dynamic_ratio * total));
  cfg.n_static = total - cfg.n_dynamic;
  cfg.noise_px = spec.noise_px;
  Rng derive = Rng::stream(spec.scene.seed, spec.seed);
  cfg.seed = derive.next_u64();
  return cfg;
}

PoseTrialResult run_pose_trial(const PoseTrialSpec& spec) {
  PoseTrialResult result;
  result.ate = std::numeric_limits<double>::quiet_NaN();
  try {
    const SceneConfig cfg = trial_scene(spec);
    const SyntheticScene scene = generate_scene(cfg);
    Rng derive = Rng::stream(cfg.seed, 0x6e6f697365ULL);
    const std::uint64_t noise_seed = derive.next_u64();
    RansacConfig ransac = spec.ransac;
    ransac.seed = derive.next_u64() ^ spec.ransac.seed;

    const int last = scene.n_frames() - 1;
    auto estimate_pair = [&](int frame_t, PoseEstimate& est, FrameObservation& obs) {
      obs = render_correspondences(scene, 0, frame_t, spec.noise_px, noise_seed);
      est = ransac_pose(obs.correspondences, scene.intrinsics, ransac,
                        policy_for(spec.policy, obs.correspondences));
    };

    PoseEstimate est;
    FrameObservation obs;
    estimate_pair(last, est, obs);
    result.rot_err_deg = rotation_geodesic(est.pose.rotation, obs.relative_pose.rotation) * kRadToDeg;
    result.trans_dir_err_deg = angle_between(est.pose.translation, obs.relative_pose.translation) * kRadToDeg;
    result.n_inliers = est.n_inliers;
    result.n_correspondences = static_cast<int>(obs.correspondences.size());
    std::size_t n_dyn = 0;
    std::size_t n_dyn_in = 0;
    for (std::size_t i = 0; i < obs.correspondences.size(); ++i) {
      if (!obs.correspondences[i].is_dynamic) continue;
      ++n_dyn;
      n_dyn_in += est.inlier_mask[i] ? 1U : 0U;
    }
    result.dynamic_coverage = n_dyn == 0 ? 0.0 : static_cast<double>(n_dyn_in) / static_cast<double>(n_dyn);

    if (spec.with_ate) {
      // Camera-to-world poses expressed in the frame-0 camera; the unobservable
      // pair scale is taken from ground truth so ATE measures direction and
      // rotation drift only.
      Trajectory gt;
      Trajectory pred;
      gt.timestamps.push_back(0.0);
      pred.timestamps.push_back(0.0);
      gt.poses.push_back(PoseSE3::identity());
      pred.poses.push_back(PoseSE3::identity());
      for (int f = 1; f <= last; ++f) {
        PoseEstimate e = est;
        FrameObservation o = obs;
        if (f != last) estimate_pair(f, e, o);
        PoseSE3 scaled = e.pose;
        scaled.translation *= o.relative_pose.translation.norm();
        gt.timestamps.push_back(static_cast<double>(f));
        pred.timestamps.push_back(static_cast<double>(f));
        gt.poses.push_back(o.relative_pose.inverse());
        pred.poses.push_back(scaled.inverse());
      }
      result.ate = ate(pred, gt);
    }
  } catch (const Error& e) {
    result.failed = true;
    result.failure = std::string(to_string(e.code()));
  }
  return result;
}

PoseTrialSpec contamination_scenario(double dynamic_ratio, MaskMode policy) {
  PoseTrialSpec spec;
  spec.scene.coherent_motion = true;
  spec.scene.trajectory.radius = 5.0;
  spec.ransac.inlier_threshold = 3e-3;
  spec.dynamic_ratio = dynamic_ratio;
  spec.noise_px = 0.5;
  spec.policy = policy;
  spec.with_ate = false;
  return spec;
}

PolicySummary summarize_trials(PoseTrialSpec spec, int n_seeds) {
  std::vector<double> rot;
  std::vector<double> coverage;
  PolicySummary summary;
  for (int s = 0; s < n_seeds; ++s) {
    spec.seed = static_cast<std::uint64_t>(s);
    const PoseTrialResult r = run_pose_trial(spec);
    if (r.failed) {
      ++summary.n_failed;
      rot.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    rot.push_back(r.rot_err_deg);
    coverage.push_back(r.dynamic_coverage);
  }
  summary.median_rot_err_deg = median(rot);
  summary.median_dynamic_coverage = coverage.empty() ? 0.0 : median(coverage);
  return summary;
}

}  // namespace dyn4d
