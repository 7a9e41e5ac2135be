#pragma once

// Essential-matrix pose estimation with an optional dynamics mask over the
// correspondences.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dyn4d/geometry.hpp"
#include "dyn4d/scene_sim.hpp"

namespace dyn4d {

struct RansacConfig {
  int n_iterations{200};
  double inlier_threshold{1e-3};  // |x~_t^T E x~_r| with E scaled to singular values (1, 1, 0)
  std::uint64_t seed{7};
  int min_inliers{8};

  void validate() const;
};

enum class MaskMode { None, HardExclude, SoftWeight };

// weights[i] is the staticness of correspondence i: 1 static, 0 fully dynamic.
struct MaskPolicy {
  MaskMode mode{MaskMode::None};
  std::optional<std::vector<double>> weights;

  static MaskPolicy none() { return {}; }
  static MaskPolicy hard(std::vector<double> w) { return {MaskMode::HardExclude, std::move(w)}; }
  static MaskPolicy soft(std::vector<double> w) { return {MaskMode::SoftWeight, std::move(w)}; }
};

inline constexpr double kHardExcludeThreshold = 0.5;

struct PoseEstimate {
  PoseSE3 pose;  // translation has unit norm
  EssentialMatrix essential;
  std::vector<bool> inlier_mask;
  int n_inliers{0};
};

// Normalized 8-point solver. The result has singular values (1, 1, 0).
// Throws DegenerateConfiguration for fewer than 8 correspondences or a design
// matrix of rank below 8.
[[nodiscard]] EssentialMatrix eight_point(std::span<const Correspondence> correspondences,
                                          const CameraIntrinsics& k);

// Midpoint triangulation in the reference camera frame. Throws ParallelRays
// when the rays are closer than 1e-10 rad.
[[nodiscard]] Vec3 triangulate(const PixelHomogeneous& x_r, const PixelHomogeneous& x_t,
                               const CameraIntrinsics& k, const PoseSE3& pose);

// The four (R, +-t) factorizations of E.
[[nodiscard]] std::vector<PoseSE3> essential_candidates(const EssentialMatrix& e);

// Number of correspondences that triangulate in front of both cameras.
[[nodiscard]] int cheirality_count(const PoseSE3& pose, std::span<const Correspondence> correspondences,
                                   const CameraIntrinsics& k);

// Picks the candidate with most points in front of both cameras. Throws
// CheiralityAmbiguous unless the winner holds a strict majority.
[[nodiscard]] PoseSE3 decompose_essential(const EssentialMatrix& e,
                                          std::span<const Correspondence> correspondences,
                                          const CameraIntrinsics& k);

// Throws NotEnoughInliers when fewer than 8 correspondences remain after hard
// exclusion or the best consensus is below config.min_inliers; InvalidArgument
// when the weights do not match the correspondences.
[[nodiscard]] PoseEstimate ransac_pose(std::span<const Correspondence> correspondences,
                                       const CameraIntrinsics& k, const RansacConfig& config,
                                       const MaskPolicy& policy);

// Ground-truth staticness weights (1 static, 0 dynamic).
[[nodiscard]] std::vector<double> ground_truth_weights(std::span<const Correspondence> correspondences);

[[nodiscard]] std::string to_string(MaskMode mode);
[[nodiscard]] MaskMode parse_mask_mode(const std::string& text);

}  // namespace dyn4d
