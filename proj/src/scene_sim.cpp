#include "dyn4d/scene_sim.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "dyn4d/error.hpp"
#include "dyn4d/rng.hpp"

namespace dyn4d {
namespace {

constexpr std::uint64_t kStreamStatic = 1;
constexpr std::uint64_t kStreamDynamic = 2;
constexpr std::uint64_t kStreamObject = 3;
constexpr int kMaxRejections = 1000;

Vec3 sample_in_box(Rng& rng, const Vec3& lo, const Vec3& hi) {
  const double x = rng.uniform(lo.x(), hi.x());
  const double y = rng.uniform(lo.y(), hi.y());
  const double z = rng.uniform(lo.z(), hi.z());
  return {x, y, z};
}

Vec3 sample_unit_vector(Rng& rng) {
  for (;;) {
    const double x = rng.normal();
    const double y = rng.normal();
    const double z = rng.normal();
    const Vec3 v(x, y, z);
    if (v.norm() > 1e-9) {
      return v.normalized();
    }
  }
}

std::vector<PoseSE3> make_trajectory(const SceneConfig& config) {
  const Vec3 centre = 0.5 * (config.volume.min + config.volume.max);
  const TrajectoryParams& p = config.trajectory;
  std::vector<PoseSE3> poses;
  poses.reserve(static_cast<std::size_t>(config.n_frames));
  for (int f = 0; f < config.n_frames; ++f) {
    const double s = static_cast<double>(f);
    Vec3 eye;
    switch (p.kind) {
      case TrajectoryKind::Orbit: {
        const double theta = s * p.step;
        eye = centre + Vec3(p.radius * std::sin(theta), -p.height, -p.radius * std::cos(theta));
        break;
      }
      case TrajectoryKind::Line:
        eye = centre + Vec3(s * p.step, -p.height, -p.radius);
        break;
      case TrajectoryKind::Arc: {
        const double theta = s * p.step;
        const double lift = p.height + 0.5 * p.radius * std::sin(theta);
        eye = centre + Vec3(p.radius * std::sin(theta), -lift, -p.radius * std::cos(theta));
        break;
      }
    }
    poses.push_back(look_at(eye, centre));
  }
  return poses;
}

bool in_front_of_all(const Vec3& x, const std::vector<PoseSE3>& poses, double min_depth) {
  for (const auto& pose : poses) {
    if (!(pose.apply(x).z() > min_depth)) {
      return false;
    }
  }
  return true;
}

struct ObjectMotion {
  Vec3 direction;
  double phase{0.0};
  Vec3 anchor;
};

Vec3 track_position(const SceneConfig& config, const Vec3& start, const Vec3& direction,
                    double phase, int frame) {
  const double f = static_cast<double>(frame);
  switch (config.motion_model) {
    case MotionModel::ConstantVelocity:
      return start + f * config.motion_scale * direction;
    case MotionModel::Sinusoidal: {
      // Amplitude chosen so the peak per-frame speed equals motion_scale.
      const double omega = 2.0 * std::numbers::pi / config.sinusoid_period;
      const double amplitude = config.motion_scale / omega;
      return start + amplitude * (std::sin(omega * f + phase) - std::sin(phase)) * direction;
    }
  }
  return start;
}

bool inside_image(const PixelHomogeneous& x, int width, int height) {
  return x.u >= 0.0 && x.v >= 0.0 && x.u < static_cast<double>(width) &&
         x.v < static_cast<double>(height);
}

}  // namespace

void SceneConfig::validate() const {
  if (n_static < 0 || n_dynamic < 0 || n_static + n_dynamic < 8) {
    throw Error(ErrorCode::InvalidArgument, "need n_static + n_dynamic >= 8 points");
  }
  if (n_frames < 2) {
    throw Error(ErrorCode::InvalidArgument, "need at least 2 frames");
  }
  if (!(noise_px >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "noise_px must be non-negative");
  }
  if (image_width <= 0 || image_height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  }
  if (!(volume.min.array() < volume.max.array()).all()) {
    throw Error(ErrorCode::InvalidArgument, "volume min must be below max on every axis");
  }
  if (!(motion_scale >= 0.0) || !(sinusoid_period > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "motion parameters out of range");
  }
  if (!(trajectory.radius > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "trajectory radius must be positive");
  }
  if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  }
}

SyntheticScene generate_scene(const SceneConfig& config) {
  config.validate();

  SyntheticScene scene;
  scene.camera_poses = make_trajectory(config);
  scene.intrinsics = config.intrinsics;
  scene.image_width = config.image_width;
  scene.image_height = config.image_height;

  scene.static_points.reserve(static_cast<std::size_t>(config.n_static));
  for (int i = 0; i < config.n_static; ++i) {
    Rng rng = Rng::stream(config.seed, kStreamStatic, static_cast<std::uint64_t>(i));
    int failures = 0;
    for (;;) {
      const Vec3 x = sample_in_box(rng, config.volume.min, config.volume.max);
      if (in_front_of_all(x, scene.camera_poses, config.min_depth)) {
        scene.static_points.push_back(x);
        break;
      }
      if (++failures >= kMaxRejections) {
        throw Error(ErrorCode::InfeasibleConfig,
                    "static point " + std::to_string(i) + " cannot be placed in front of every camera");
      }
    }
  }

  // A coherent object occupies one octant-sized sub-box and moves as a unit.
  ObjectMotion object;
  Vec3 object_lo = config.volume.min;
  Vec3 object_hi = config.volume.max;
  if (config.coherent_motion) {
    Rng rng = Rng::stream(config.seed, kStreamObject, 0);
    object.direction = sample_unit_vector(rng);
    object.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vec3 half = 0.5 * (config.volume.max - config.volume.min);
    object_lo = sample_in_box(rng, config.volume.min, config.volume.min + half);
    object_hi = object_lo + half;
  }

  scene.dynamic_tracks.reserve(static_cast<std::size_t>(config.n_dynamic));
  for (int i = 0; i < config.n_dynamic; ++i) {
    Rng rng = Rng::stream(config.seed, kStreamDynamic, static_cast<std::uint64_t>(i));
    int failures = 0;
    for (;;) {
      const Vec3 start = sample_in_box(rng, object_lo, object_hi);
      Vec3 direction = object.direction;
      double phase = object.phase;
      if (!config.coherent_motion) {
        direction = sample_unit_vector(rng);
        phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      }
      std::vector<Vec3> track;
      track.reserve(static_cast<std::size_t>(config.n_frames));
      bool ok = true;
      for (int f = 0; f < config.n_frames && ok; ++f) {
        track.push_back(track_position(config, start, direction, phase, f));
        ok = in_front_of_all(track.back(), scene.camera_poses, config.min_depth);
      }
      if (ok) {
        scene.dynamic_tracks.push_back(std::move(track));
        break;
      }
      if (++failures >= kMaxRejections) {
        throw Error(ErrorCode::InfeasibleConfig,
                    "dynamic track " + std::to_string(i) + " cannot stay in front of every camera");
      }
    }
  }
  return scene;
}

FrameObservation render_correspondences(const SyntheticScene& scene, int frame_r, int frame_t,
                                        double noise_px, std::uint64_t seed) {
  const int n_frames = scene.n_frames();
  if (frame_r < 0 || frame_t < 0 || frame_r >= n_frames || frame_t >= n_frames) {
    throw Error(ErrorCode::InvalidArgument, "frame index out of range");
  }
  if (frame_r == frame_t) {
    throw Error(ErrorCode::InvalidArgument, "reference and target frames must differ");
  }
  if (!(noise_px >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "noise_px must be non-negative");
  }

  const PoseSE3& pose_r = scene.camera_poses[static_cast<std::size_t>(frame_r)];
  const PoseSE3& pose_t = scene.camera_poses[static_cast<std::size_t>(frame_t)];
  FrameObservation obs;
  obs.frame_r = frame_r;
  obs.frame_t = frame_t;
  obs.relative_pose = pose_t * pose_r.inverse();

  const CameraIntrinsics& k = scene.intrinsics;
  const std::uint64_t pair_key =
      static_cast<std::uint64_t>(frame_r) * static_cast<std::uint64_t>(n_frames) +
      static_cast<std::uint64_t>(frame_t);

  auto emit = [&](std::size_t index, const Vec3& world_r, const Vec3& world_t, bool dynamic) {
    const Vec3 cam_r = pose_r.apply(world_r);
    const Vec3 cam_t = pose_t.apply(world_t);
    if (!(cam_r.z() > 0.0) || !(cam_t.z() > 0.0)) {
      return;
    }
    Correspondence c;
    c.depth_r = cam_r.z();
    c.is_dynamic = dynamic;
    if (dynamic) {
      c.displacement.vector = cam_t - obs.relative_pose.apply(cam_r);
    }
    c.x_r = project(cam_r, k);
    c.x_t = project(cam_t, k);
    if (noise_px > 0.0) {
      Rng rng = Rng::stream(seed, pair_key, index);
      c.x_r.u += noise_px * rng.normal();
      c.x_r.v += noise_px * rng.normal();
      c.x_t.u += noise_px * rng.normal();
      c.x_t.v += noise_px * rng.normal();
    }
    if (!inside_image(c.x_r, scene.image_width, scene.image_height) ||
        !inside_image(c.x_t, scene.image_width, scene.image_height)) {
      return;
    }
    obs.correspondences.push_back(c);
  };

  std::size_t index = 0;
  for (const auto& x : scene.static_points) {
    emit(index++, x, x, false);
  }
  for (const auto& track : scene.dynamic_tracks) {
    emit(index++, track[static_cast<std::size_t>(frame_r)], track[static_cast<std::size_t>(frame_t)],
         true);
  }

  if (obs.correspondences.size() < 8) {
    throw Error(ErrorCode::EmptyObservation,
                "only " + std::to_string(obs.correspondences.size()) + " visible correspondences");
  }
  return obs;
}

double dynamic_ratio(const FrameObservation& observation) {
  if (observation.correspondences.empty()) {
    throw Error(ErrorCode::EmptyObservation, "no correspondences");
  }
  std::size_t dynamic = 0;
  for (const auto& c : observation.correspondences) {
    dynamic += c.is_dynamic ? 1U : 0U;
  }
  return static_cast<double>(dynamic) / static_cast<double>(observation.correspondences.size());
}

namespace {

void put(std::ostream& out, double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  out << buffer;
}

}  // namespace

void write_correspondences(std::ostream& out, const FrameObservation& observation) {
  for (const auto& c : observation.correspondences) {
    const PixelHomogeneous r = c.x_r.normalized();
    const PixelHomogeneous t = c.x_t.normalized();
    out << observation.frame_r << ' ' << observation.frame_t << ' ';
    for (double v : {r.u, r.v, t.u, t.v, c.depth_r}) {
      put(out, v);
      out << ' ';
    }
    out << (c.is_dynamic ? 1 : 0);
    for (int i = 0; i < 3; ++i) {
      out << ' ';
      put(out, c.displacement.vector(i));
    }
    out << '\n';
  }
}

std::vector<FrameObservation> read_correspondences(std::istream& in) {
  std::vector<FrameObservation> result;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') {
      continue;
    }
    std::istringstream fields(line);
    int fr = 0;
    int ft = 0;
    double ur = 0, vr = 0, ut = 0, vt = 0, depth = 0, mx = 0, my = 0, mz = 0;
    int dynamic = 0;
    std::string extra;
    if (!(fields >> fr >> ft >> ur >> vr >> ut >> vt >> depth >> dynamic >> mx >> my >> mz) ||
        (fields >> extra) || (dynamic != 0 && dynamic != 1) || !(depth > 0.0)) {
      throw Error(ErrorCode::ParseError, "correspondence dump line " + std::to_string(line_no));
    }
    if (result.empty() || result.back().frame_r != fr || result.back().frame_t != ft) {
      FrameObservation obs;
      obs.frame_r = fr;
      obs.frame_t = ft;
      result.push_back(std::move(obs));
    }
    Correspondence c;
    c.x_r = {ur, vr, 1.0};
    c.x_t = {ut, vt, 1.0};
    c.depth_r = depth;
    c.is_dynamic = dynamic == 1;
    c.displacement.vector = Vec3(mx, my, mz);
    result.back().correspondences.push_back(c);
  }
  return result;
}

void write_scene(std::ostream& out, const SyntheticScene& scene) {
  for (std::size_t f = 0; f < scene.camera_poses.size(); ++f) {
    const PoseSE3& p = scene.camera_poses[f];
    out << "pose " << f;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        out << ' ';
        put(out, p.rotation(r, c));
      }
    }
    for (int i = 0; i < 3; ++i) {
      out << ' ';
      put(out, p.translation(i));
    }
    out << '\n';
  }
  for (std::size_t i = 0; i < scene.static_points.size(); ++i) {
    out << "static " << i;
    for (int a = 0; a < 3; ++a) {
      out << ' ';
      put(out, scene.static_points[i](a));
    }
    out << '\n';
  }
  for (std::size_t i = 0; i < scene.dynamic_tracks.size(); ++i) {
    for (std::size_t f = 0; f < scene.dynamic_tracks[i].size(); ++f) {
      out << "track " << i << ' ' << f;
      for (int a = 0; a < 3; ++a) {
        out << ' ';
        put(out, scene.dynamic_tracks[i][f](a));
      }
      out << '\n';
    }
  }
}

std::string to_string(MotionModel model) {
  return model == MotionModel::ConstantVelocity ? "constant_velocity" : "sinusoidal";
}

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::Orbit: return "orbit";
    case TrajectoryKind::Line: return "line";
    case TrajectoryKind::Arc: return "arc";
  }
  return "orbit";
}

MotionModel parse_motion_model(const std::string& text) {
  if (text == "constant_velocity") return MotionModel::ConstantVelocity;
  if (text == "sinusoidal") return MotionModel::Sinusoidal;
  throw Error(ErrorCode::ConfigError, "unknown motion model '" + text + "'");
}

TrajectoryKind parse_trajectory(const std::string& text) {
  if (text == "orbit") return TrajectoryKind::Orbit;
  if (text == "line") return TrajectoryKind::Line;
  if (text == "arc") return TrajectoryKind::Arc;
  throw Error(ErrorCode::ConfigError, "unknown trajectory '" + text + "'");
}

}  // namespace dyn4d
