#pragma once

// Test-only helpers. Nothing here calls into the code under test beyond the
// plain data types, so these can serve as independent oracles.

#include <cmath>
#include <cstdint>
#include <random>

#include "dyn4d/geometry.hpp"
#include "dyn4d/scene_sim.hpp"

namespace dyn4d::testing {

inline Vec3 random_vec(std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  const double x = u(gen);
  const double y = u(gen);
  const double z = u(gen);
  return {x, y, z};
}

// Rodrigues formula written out by hand.
inline Mat3 rodrigues(const Vec3& axis_angle) {
  const double theta = axis_angle.norm();
  if (theta == 0.0) return Mat3::Identity();
  const Vec3 a = axis_angle / theta;
  Mat3 k;
  k << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
}

inline PoseSE3 random_pose(std::mt19937_64& gen, double max_angle = 0.3, double max_t = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 axis = random_vec(gen);
  const double angle = max_angle * std::abs(u(gen));
  Vec3 t = random_vec(gen, -max_t, max_t);
  if (t.norm() < 0.1) t.x() += 0.5;
  return {rodrigues(axis.normalized() * angle), t};
}

inline CameraIntrinsics default_intrinsics() { return {500.0, 520.0, 320.0, 240.0}; }

inline SceneConfig static_scene(std::uint64_t seed, int n_static = 120) {
  SceneConfig c;
  c.n_static = n_static;
  c.n_dynamic = 0;
  c.seed = seed;
  return c;
}

}  // namespace dyn4d::testing
