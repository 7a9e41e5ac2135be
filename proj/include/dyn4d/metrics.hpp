#pragma once

// Evaluation protocol: Sim(3) trajectory alignment with ATE / RPE, depth
// alignment with Abs Rel and threshold accuracy, and point-cloud
// accuracy / completion / overall.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dyn4d/geometry.hpp"

namespace dyn4d {

struct Sim3Transform {
  double scale{1.0};
  Mat3 rotation{Mat3::Identity()};
  Vec3 translation{Vec3::Zero()};

  [[nodiscard]] Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
  // Maps a camera-to-world pose into the aligned world frame.
  [[nodiscard]] PoseSE3 apply(const PoseSE3& camera_to_world) const;
};

// Least-squares similarity with dst ~ s R src + t (Umeyama). The rotation is
// always proper: reflections are corrected through diag(1, 1, -1).
// Throws LengthMismatch for unequal inputs and DegenerateGeometry for fewer
// than 3 points or collinear / coincident configurations.
[[nodiscard]] Sim3Transform umeyama_sim3(std::span<const Vec3> src, std::span<const Vec3> dst);

[[nodiscard]] double alignment_rmse(const Sim3Transform& s, std::span<const Vec3> src,
                                    std::span<const Vec3> dst);

// Camera-to-world poses with strictly increasing timestamps.
struct Trajectory {
  std::vector<double> timestamps;
  std::vector<PoseSE3> poses;

  [[nodiscard]] std::size_t size() const { return poses.size(); }
  [[nodiscard]] std::vector<Vec3> positions() const;
  void validate() const;
};

[[nodiscard]] Trajectory subset(const Trajectory& trajectory, std::span<const std::size_t> indices);

// RMSE of camera positions after Sim(3) alignment of pred onto gt.
[[nodiscard]] double ate(const Trajectory& pred, const Trajectory& gt);

struct RelativePoseError {
  double trans{0.0};    // RMSE of relative translation error norms, gt units
  double rot_deg{0.0};  // RMSE of relative rotation angles, degrees
};

// Frame gap `delta`, evaluated after Sim(3) alignment of pred onto gt.
// Throws LengthMismatch when delta < 1 or delta >= length.
[[nodiscard]] RelativePoseError rpe(const Trajectory& pred, const Trajectory& gt, std::size_t delta = 1);

// n_sample evenly spaced indices including both ends, rounded to nearest and
// deduplicated; all frames when n_total <= n_sample.
[[nodiscard]] std::vector<std::size_t> sample_frames(std::size_t n_total, std::size_t n_sample = 10);

// --- depth -----------------------------------------------------------------

struct DepthMap {
  int width{0};
  int height{0};
  std::vector<double> values;  // row-major, row 0 at the top

  DepthMap() = default;
  DepthMap(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  [[nodiscard]] double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::size_t size() const { return values.size(); }
};

using ValidMask = std::vector<bool>;  // empty means every pixel is a candidate

enum class DepthAlignment { Scale, ScaleShift, PerFrame };
enum class ScaleEstimator { LeastSquares, MedianRatio };

struct DepthEvalConfig {
  DepthAlignment alignment{DepthAlignment::Scale};
  ScaleEstimator estimator{ScaleEstimator::LeastSquares};
  double min_depth{1e-3};
  double max_depth{1e3};
  double threshold{1.25};

  void validate() const;
};

struct ScaleShift {
  double scale{1.0};
  double shift{0.0};
};

// A pixel is valid when its mask entry is set, the ground truth lies in
// [min_depth, max_depth] (which excludes non-positive values) and the
// prediction is finite.
[[nodiscard]] bool depth_pixel_valid(double pred, double gt, const ValidMask& mask, std::size_t i,
                                     const DepthEvalConfig& config);

// One entry per frame. Sequence modes repeat the shared fit. Throws
// ShapeMismatch on inconsistent inputs and EmptyValidSet when a fit has no
// valid pixel.
[[nodiscard]] std::vector<ScaleShift> align_depth(std::span<const DepthMap> pred,
                                                  std::span<const DepthMap> gt,
                                                  std::span<const ValidMask> valid,
                                                  const DepthEvalConfig& config);

[[nodiscard]] DepthMap apply_alignment(const DepthMap& pred, const ScaleShift& fit,
                                       const DepthEvalConfig& config);

struct DepthScores {
  double abs_rel{0.0};
  double delta_acc{0.0};
  std::size_t n_valid{0};
};

// Metrics on already-aligned predictions, pooled over every valid pixel of
// the given frames. Throws EmptyValidSet.
[[nodiscard]] DepthScores depth_metrics(std::span<const DepthMap> aligned_pred,
                                        std::span<const DepthMap> gt,
                                        std::span<const ValidMask> valid,
                                        const DepthEvalConfig& config);

struct DepthEvaluation {
  std::vector<ScaleShift> alignment;
  std::vector<DepthScores> per_frame;  // frames without valid pixels report n_valid = 0
  DepthScores aggregate;
};

[[nodiscard]] DepthEvaluation evaluate_depth(std::span<const DepthMap> pred,
                                             std::span<const DepthMap> gt,
                                             std::span<const ValidMask> valid,
                                             const DepthEvalConfig& config);

// --- point clouds ----------------------------------------------------------

// Distance from every query point to its nearest reference point. The grid
// path returns bit-identical values to the exhaustive path.
[[nodiscard]] std::vector<double> nearest_distances(std::span<const Vec3> query,
                                                    std::span<const Vec3> reference,
                                                    bool use_grid = false);

struct PointCloudScores {
  double acc_mean{0.0};
  double acc_median{0.0};
  double comp_mean{0.0};
  double comp_median{0.0};
  double overall_mean{0.0};
  double overall_median{0.0};
};

// Clouds are assumed pre-aligned. Throws EmptyCloud.
[[nodiscard]] PointCloudScores pointcloud_metrics(std::span<const Vec3> pred, std::span<const Vec3> gt,
                                                  bool use_grid = false);

// Median with the mean of the two middle values for even counts; NaN when empty.
[[nodiscard]] double median(std::vector<double> values);

// --- reporting -------------------------------------------------------------

struct MetricsReport {
  std::map<std::string, double> values;
  std::map<std::string, std::string> metadata;
};

[[nodiscard]] std::string to_string(DepthAlignment mode);
[[nodiscard]] DepthAlignment parse_depth_alignment(const std::string& text);

}  // namespace dyn4d
