#pragma once

// Deterministic synthetic dynamic scenes.
//
// A scene is a set of static world points, a set of dynamic point tracks (one
// position per frame) and one world->camera pose per frame. Rendering a frame
// pair projects every point into both views and records the ground-truth
// displacement of dynamic points in the target camera frame.
//
// Random streams (see Rng::stream), keyed by the scene seed:
//   (kStreamStatic, i)    static point i (including rejection retries)
//   (kStreamDynamic, i)   dynamic point i start position and motion
//   (kStreamObject, 0)    shared motion of a coherent dynamic object
// and by the render seed:
//   (frame_r * n_frames + frame_t, point index)  pixel noise of one point

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dyn4d/geometry.hpp"

namespace dyn4d {

enum class MotionModel { ConstantVelocity, Sinusoidal };
enum class TrajectoryKind { Orbit, Line, Arc };

struct Box3 {
  Vec3 min{-2.0, -2.0, -2.0};
  Vec3 max{2.0, 2.0, 2.0};
};

struct TrajectoryParams {
  TrajectoryKind kind{TrajectoryKind::Orbit};
  double radius{8.0};       // distance from the volume centre
  double step{0.05};        // radians per frame (orbit, arc) or scene units per frame (line)
  double height{1.0};       // camera elevation above the centre (arc sweeps it)
};

struct SceneConfig {
  int n_static{120};
  int n_dynamic{0};
  Box3 volume{};
  MotionModel motion_model{MotionModel::ConstantVelocity};
  double motion_scale{0.05};          // scene units per frame
  bool coherent_motion{false};        // all dynamic points move as one object
  double sinusoid_period{8.0};        // frames
  TrajectoryParams trajectory{};
  int n_frames{5};
  CameraIntrinsics intrinsics{500.0, 500.0, 320.0, 240.0};
  int image_width{640};
  int image_height{480};
  double noise_px{0.0};
  std::uint64_t seed{42};
  double min_depth{0.1};              // cheirality margin used by rejection sampling

  // Throws InvalidArgument on violated invariants.
  void validate() const;
};

struct SyntheticScene {
  std::vector<Vec3> static_points;
  std::vector<std::vector<Vec3>> dynamic_tracks;  // [point][frame]
  std::vector<PoseSE3> camera_poses;              // world -> camera
  CameraIntrinsics intrinsics;
  int image_width{0};
  int image_height{0};

  [[nodiscard]] int n_frames() const { return static_cast<int>(camera_poses.size()); }
};

struct Correspondence {
  PixelHomogeneous x_r;
  PixelHomogeneous x_t;
  double depth_r{1.0};
  bool is_dynamic{false};
  DynamicDisplacement displacement;
};

struct FrameObservation {
  int frame_r{0};
  int frame_t{1};
  std::vector<Correspondence> correspondences;
  PoseSE3 relative_pose;  // t <- r
};

// Throws InfeasibleConfig when 1000 consecutive samples for one point fail
// the cheirality check.
[[nodiscard]] SyntheticScene generate_scene(const SceneConfig& config);

// Throws InvalidArgument for bad frame indices, EmptyObservation when fewer
// than 8 correspondences survive the visibility test.
[[nodiscard]] FrameObservation render_correspondences(const SyntheticScene& scene, int frame_r,
                                                      int frame_t, double noise_px,
                                                      std::uint64_t seed);

// Fraction of dynamic correspondences. Throws EmptyObservation when empty.
[[nodiscard]] double dynamic_ratio(const FrameObservation& observation);

// Line format, one correspondence per line:
//   frame_r frame_t u_r v_r u_t v_t depth_r is_dynamic mx my mz
void write_correspondences(std::ostream& out, const FrameObservation& observation);
// Reads every record of a dump; '#' lines and blank lines are skipped.
// Throws ParseError naming the line on malformed input.
[[nodiscard]] std::vector<FrameObservation> read_correspondences(std::istream& in);

// Scene dump: "pose f r00 .. r22 tx ty tz", "static i x y z", "track i f x y z".
void write_scene(std::ostream& out, const SyntheticScene& scene);

[[nodiscard]] std::string to_string(MotionModel model);
[[nodiscard]] std::string to_string(TrajectoryKind kind);
[[nodiscard]] MotionModel parse_motion_model(const std::string& text);
[[nodiscard]] TrajectoryKind parse_trajectory(const std::string& text);

}  // namespace dyn4d
