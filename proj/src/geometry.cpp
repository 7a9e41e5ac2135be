#include "dyn4d/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "dyn4d/error.hpp"

namespace dyn4d {

CameraIntrinsics::CameraIntrinsics(double fx_, double fy_, double cx_, double cy_)
    : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Mat3 CameraIntrinsics::inverse() const {
  Mat3 k;
  k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return k;
}

PoseSE3 PoseSE3::inverse() const {
  const Mat3 rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

PoseSE3 PoseSE3::operator*(const PoseSE3& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

bool PoseSE3::is_valid(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(rotation.determinant() - 1.0) < tol && translation.allFinite();
}

PixelHomogeneous PixelHomogeneous::normalized() const {
  if (w == 0.0) {
    throw Error(ErrorCode::InvalidArgument, "homogeneous pixel at infinity");
  }
  return {u / w, v / w, 1.0};
}

Mat3 skew(const Vec3& t) {
  Mat3 s;
  s << 0.0, -t.z(), t.y(),
       t.z(), 0.0, -t.x(),
       -t.y(), t.x(), 0.0;
  return s;
}

EssentialMatrix essential_from_pose(const PoseSE3& pose) {
  if (pose.translation.norm() < 1e-12) {
    throw Error(ErrorCode::DegeneratePose, "essential matrix undefined for zero baseline");
  }
  return {skew(pose.translation) * pose.rotation};
}

EssentialMatrix enforce_essential(const Mat3& e) {
  Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  const double s = 0.5 * (sv(0) + sv(1));
  return {svd.matrixU() * Vec3(s, s, 0.0).asDiagonal() * svd.matrixV().transpose()};
}

Vec3 backproject(const PixelHomogeneous& x, double depth, const CameraIntrinsics& k) {
  if (!(depth > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "depth must be positive");
  }
  return depth * (k.inverse() * x.normalized().vector());
}

PixelHomogeneous project(const Vec3& point, const CameraIntrinsics& k) {
  if (!(point.z() > 0.0)) {
    throw Error(ErrorCode::BehindCamera, "point is not in front of the camera");
  }
  return PixelHomogeneous::from_vector(k.matrix() * point).normalized();
}

PixelHomogeneous rigid_reproject(const PixelHomogeneous& x_r, double depth,
                                 const CameraIntrinsics& k, const PoseSE3& pose) {
  return dynamic_reproject(x_r, depth, k, pose, DynamicDisplacement{});
}

PixelHomogeneous dynamic_reproject(const PixelHomogeneous& x_r, double depth,
                                   const CameraIntrinsics& k, const PoseSE3& pose,
                                   const DynamicDisplacement& m) {
  if (!(depth > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "depth must be positive");
  }
  const Mat3 kmat = k.matrix();
  const Vec3 rigid = pose.rotation * (depth * (k.inverse() * x_r.vector())) + pose.translation;
  const Vec3 x_t = kmat * rigid + kmat * m.vector;
  if (!(x_t.z() > 0.0)) {
    throw Error(ErrorCode::BehindCamera, "reprojected point is not in front of the target camera");
  }
  return PixelHomogeneous::from_vector(x_t);
}

double epipolar_residual(const PixelHomogeneous& x_r, const PixelHomogeneous& x_t,
                         const CameraIntrinsics& k, const EssentialMatrix& e) {
  const Mat3 kinv = k.inverse();
  const Vec3 nr = kinv * x_r.normalized().vector();
  const Vec3 nt = kinv * x_t.normalized().vector();
  return nt.dot(e.matrix * nr);
}

double epipolar_residual_approx(const PixelHomogeneous& x_r, double depth_r,
                                const DynamicDisplacement& m, const CameraIntrinsics& k,
                                const PoseSE3& pose) {
  if (!(depth_r > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "depth must be positive");
  }
  const Vec3 ray = k.inverse() * x_r.normalized().vector();
  const Vec3 point_t = pose.apply(depth_r * ray);
  const double z_t = point_t.z();
  if (!(z_t > 0.0)) {
    throw Error(ErrorCode::BehindCamera, "point is not in front of the target camera");
  }

  const Vec3 line = essential_from_pose(pose).matrix * ray;
  const Vec2 line_xy = line.head<2>();
  const double line_norm = line_xy.norm();
  if (line_norm < 1e-15) {
    throw Error(ErrorCode::DegeneratePose, "epipolar line has no normal direction");
  }
  const Vec2 normal = line_xy / line_norm;

  const Vec3& d = m.vector;
  const Vec2 image_shift(d.x() / z_t - point_t.x() * d.z() / (z_t * z_t),
                         d.y() / z_t - point_t.y() * d.z() / (z_t * z_t));
  const double lever_arm = pose.translation.cross(point_t).head<2>().norm();
  const double perpendicular = lever_arm * normal.dot(image_shift);
  return perpendicular / depth_r;
}

double rotation_angle(const Mat3& r) {
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  // acos loses precision near 0; recover the small-angle branch from the skew part.
  const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * axis.norm(), c);
}

double rotation_geodesic(const Mat3& a, const Mat3& b) { return rotation_angle(a.transpose() * b); }

double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

Mat3 rotation_from_axis_angle(const Vec3& axis, double angle) {
  if (axis.norm() == 0.0) {
    return Mat3::Identity();
  }
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

PoseSE3 look_at(const Vec3& eye, const Vec3& target, const Vec3& down) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = down.cross(z);
  if (x.norm() < 1e-12) {
    throw Error(ErrorCode::InvalidArgument, "look_at direction parallel to the down vector");
  }
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return {r, -(r * eye)};
}

}  // namespace dyn4d
