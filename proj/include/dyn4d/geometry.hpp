#pragma once

// Two-view projective geometry for static and dynamic points.
//
// Conventions:
//   * Pixels are homogeneous (u, v, w). A "normalized" pixel has w = 1.
//   * PoseSE3 maps reference-camera coordinates into target-camera
//     coordinates: X_t = R * X_r + t.
//   * Reprojection returns the unnormalized homogeneous pixel K * X_t whose
//     third component is the target-frame depth. Callers divide explicitly.

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace dyn4d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct CameraIntrinsics {
  double fx{1.0};
  double fy{1.0};
  double cx{0.0};
  double cy{0.0};

  CameraIntrinsics() = default;
  // Throws InvalidArgument unless fx > 0 and fy > 0.
  CameraIntrinsics(double fx, double fy, double cx, double cy);

  [[nodiscard]] Mat3 matrix() const;
  [[nodiscard]] Mat3 inverse() const;
};

struct PoseSE3 {
  Mat3 rotation{Mat3::Identity()};
  Vec3 translation{Vec3::Zero()};

  PoseSE3() = default;
  PoseSE3(const Mat3& r, const Vec3& t) : rotation(r), translation(t) {}

  static PoseSE3 identity() { return {}; }

  [[nodiscard]] Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  [[nodiscard]] PoseSE3 inverse() const;
  // (a * b).apply(x) == a.apply(b.apply(x))
  [[nodiscard]] PoseSE3 operator*(const PoseSE3& other) const;
  [[nodiscard]] bool is_valid(double tol = 1e-10) const;
};

struct PixelHomogeneous {
  double u{0.0};
  double v{0.0};
  double w{1.0};

  [[nodiscard]] static PixelHomogeneous from_vector(const Vec3& x) { return {x.x(), x.y(), x.z()}; }
  [[nodiscard]] Vec3 vector() const { return {u, v, w}; }
  // Divides through by w. Throws InvalidArgument when w == 0.
  [[nodiscard]] PixelHomogeneous normalized() const;
};

struct DynamicDisplacement {
  Vec3 vector{Vec3::Zero()};
};

struct EssentialMatrix {
  Mat3 matrix{Mat3::Zero()};
};

[[nodiscard]] Mat3 skew(const Vec3& t);

// E = [t]_x R. Throws DegeneratePose when |t| < 1e-12.
[[nodiscard]] EssentialMatrix essential_from_pose(const PoseSE3& pose);

// Projects E onto the essential manifold: singular values (s, s, 0) with s the
// mean of the two leading values of the input.
[[nodiscard]] EssentialMatrix enforce_essential(const Mat3& e);

// Camera-frame point D * K^-1 * x. Throws InvalidArgument when depth <= 0.
[[nodiscard]] Vec3 backproject(const PixelHomogeneous& x, double depth, const CameraIntrinsics& k);

// Normalized pixel K * X / Z. Throws BehindCamera when Z <= 0.
[[nodiscard]] PixelHomogeneous project(const Vec3& point, const CameraIntrinsics& k);

// x_t = K [R D K^-1 x_r + t]. Throws BehindCamera when the target depth <= 0.
[[nodiscard]] PixelHomogeneous rigid_reproject(const PixelHomogeneous& x_r, double depth,
                                               const CameraIntrinsics& k, const PoseSE3& pose);

// x_t = K [R D K^-1 x_r + t] + K m.
[[nodiscard]] PixelHomogeneous dynamic_reproject(const PixelHomogeneous& x_r, double depth,
                                                 const CameraIntrinsics& k, const PoseSE3& pose,
                                                 const DynamicDisplacement& m);

// x~_t^T E x~_r with x~ = K^-1 x (each pixel divided by its own w first).
[[nodiscard]] double epipolar_residual(const PixelHomogeneous& x_r, const PixelHomogeneous& x_t,
                                       const CameraIntrinsics& k, const EssentialMatrix& e);

// First-order prediction of epipolar_residual for a point at reference depth
// depth_r that moves by m (target camera frame) between the two views:
//
//   delta ~= (1 / Z_r) * n^T dX_perp
//
// n is the unit normal of the epipolar line l = E x~_r in the normalized target
// plane. dX_perp is the first-order image-plane displacement of the point,
// (m_x/Z_t - X_t m_z/Z_t^2, m_y/Z_t - Y_t m_z/Z_t^2), projected onto n and
// carried to scene units by the epipolar lever arm |(t x X_t)_xy|. E is taken as
// [t]_x R so the value is on the same scale as epipolar_residual with
// essential_from_pose(pose). Throws DegeneratePose when the epipolar line is
// undefined.
[[nodiscard]] double epipolar_residual_approx(const PixelHomogeneous& x_r, double depth_r,
                                              const DynamicDisplacement& m,
                                              const CameraIntrinsics& k, const PoseSE3& pose);

// Rotation helpers.
[[nodiscard]] double rotation_angle(const Mat3& r);
[[nodiscard]] double rotation_geodesic(const Mat3& a, const Mat3& b);
[[nodiscard]] double angle_between(const Vec3& a, const Vec3& b);
[[nodiscard]] Mat3 rotation_from_axis_angle(const Vec3& axis, double angle);
// World->camera pose looking from `eye` towards `target`; camera +z forward,
// camera +y along the projection of `down`.
[[nodiscard]] PoseSE3 look_at(const Vec3& eye, const Vec3& target, const Vec3& down = Vec3(0, -1, 0));

}  // namespace dyn4d
