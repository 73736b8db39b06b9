#pragma once

#include <cmath>
#include <string>

#include <Eigen/Geometry>

#include "ufm/common.hpp"
#include "ufm/gaussian.hpp"

namespace ufm {

/// Pinhole camera. Pixel (u, v) has its center at integer coordinates.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool valid() const noexcept {
    return fx > 0.0 && fy > 0.0 && cx > 0.0 && cx < width && cy > 0.0 && cy < height;
  }

  void validate() const {
    if (!valid()) throw Error(ErrorCode::ConfigError, "invalid camera intrinsics");
  }

  bool contains(const Vec2& px) const noexcept {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() < width && px.y() < height;
  }
};

/// Camera-to-world rigid transform: x_world = rotation * x_cam + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  static Pose from_quaternion(const Vec3& t, const Eigen::Quaterniond& q) {
    return {q.normalized().toRotationMatrix(), t};
  }

  bool valid(double tol = 1e-9) const {
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).norm();
    return ortho <= tol && rotation.determinant() > 0.0 && translation.allFinite();
  }

  Vec3 to_world(const Vec3& p_cam) const { return rotation * p_cam + translation; }
  Vec3 to_camera(const Vec3& p_world) const { return rotation.transpose() * (p_world - translation); }
};

/// Maps points from the camera frame of one image into the camera frame of another.
struct RelativeTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  RelativeTransform inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

/// Transform taking points in `prev`'s camera frame into `curr`'s camera frame.
inline RelativeTransform relative_transform(const Pose& prev, const Pose& curr) {
  const Mat3 rct = curr.rotation.transpose();
  return {rct * prev.rotation, rct * (prev.translation - curr.translation)};
}

/// World-to-camera transform of a camera-to-world pose.
inline RelativeTransform world_to_camera(const Pose& pose) {
  return relative_transform(Pose::identity(), pose);
}

inline RelativeTransform camera_to_world(const Pose& pose) {
  return {pose.rotation, pose.translation};
}

inline Vec3 backproject(const Vec2& px, double depth, const CameraIntrinsics& k) {
  if (!(depth > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "depth must be positive");
  return {(px.x() - k.cx) / k.fx * depth, (px.y() - k.cy) / k.fy * depth, depth};
}

inline Vec2 project_mean(const Vec3& p, const CameraIntrinsics& k, double z_min = kDefaultZMin) {
  if (!(p.z() > z_min)) throw Error(ErrorCode::BehindCamera, "point at or behind near plane");
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

/// Jacobian of the pinhole projection evaluated at p.
inline Mat23 projection_jacobian(const Vec3& p, const CameraIntrinsics& k,
                                 double z_min = kDefaultZMin) {
  if (!(p.z() > z_min)) throw Error(ErrorCode::BehindCamera, "point at or behind near plane");
  const double iz = 1.0 / p.z();
  const double iz2 = iz * iz;
  Mat23 a;
  a << k.fx * iz, 0.0, -k.fx * p.x() * iz2,
       0.0, k.fy * iz, -k.fy * p.y() * iz2;
  return a;
}

/// Rigidly moves a Gaussian; weight and disagreement are carried over unchanged.
inline Gaussian3 transform_gaussian(const Gaussian3& g, const RelativeTransform& t) {
  Gaussian3 out = g;
  out.mean = t.apply(g.mean);
  const Mat3 c = t.rotation * g.cov * t.rotation.transpose();
  out.cov = 0.5 * (c + c.transpose());
  return out;
}

/// Linearized (EWA-style) projection of a camera-frame Gaussian to the image plane.
inline Gaussian2 project_gaussian(const Gaussian3& g, const CameraIntrinsics& k,
                                  std::size_t source_index = 0, double z_min = kDefaultZMin) {
  const Mat23 a = projection_jacobian(g.mean, k, z_min);
  Gaussian2 out;
  out.mean = project_mean(g.mean, k, z_min);
  out.cov = floor_eigenvalues<2>(a * g.cov * a.transpose(), kPsdFloor);
  out.source_index = source_index;
  return out;
}

}  // namespace ufm
