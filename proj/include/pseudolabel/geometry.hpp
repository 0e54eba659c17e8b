#pragma once

// Rigid frames and yaw handling in the camera convention used throughout the
// library: x right, y down, z forward. The vertical axis is -y, so the ground
// plane is spanned by x and z, and the global frame is the camera frame of
// frame 0. Yaw follows the KITTI rotation_y sign: a heading of yaw maps the
// object's +x axis to (cos yaw, 0, -sin yaw).

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "pseudolabel/error.hpp"

namespace pseudolabel {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Wraps an angle into [-pi, pi).
inline double wrap_angle(double angle) {
  double wrapped = std::fmod(angle + kPi, kTwoPi);
  if (wrapped < 0.0) wrapped += kTwoPi;
  wrapped -= kPi;
  // fmod can land exactly on +pi after the shift for inputs like -pi - eps.
  if (wrapped >= kPi) wrapped -= kTwoPi;
  return wrapped;
}

// Rotation about the camera y axis by `yaw`.
inline Mat3 yaw_rotation(double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Mat3 r;
  r << c, 0.0, s,  //
      0.0, 1.0, 0.0,  //
      -s, 0.0, c;
  return r;
}

// d/dyaw of yaw_rotation(yaw).
inline Mat3 yaw_rotation_derivative(double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Mat3 r;
  r << -s, 0.0, c,  //
      0.0, 0.0, 0.0,  //
      -c, 0.0, -s;
  return r;
}

// Angle of a ground-plane direction, inverse of the heading map above.
inline double heading_angle(double dx, double dz) { return std::atan2(-dz, dx); }

class RigidTransform {
 public:
  RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  RigidTransform(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  static RigidTransform from_yaw(double yaw, const Vec3& t = Vec3::Zero()) {
    return {yaw_rotation(yaw), t};
  }
  // Row-major 3x4 [R | t], as stored in odometry pose and calibration files.
  static RigidTransform from_row_major(std::span<const double, 12> values) {
    Mat3 r;
    Vec3 t;
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) r(row, col) = values[row * 4 + col];
      t(row) = values[row * 4 + 3];
    }
    return {r, t};
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 operator*(const Vec3& p) const { return apply(p); }

  // (a * b).apply(p) == a.apply(b.apply(p))
  RigidTransform operator*(const RigidTransform& other) const {
    return {rotation_ * other.rotation_, rotation_ * other.translation_ + translation_};
  }

  RigidTransform inverse() const {
    const Mat3 rt = rotation_.transpose();
    return {rt, -(rt * translation_)};
  }

  bool is_valid(double tolerance = 1e-9) const {
    if (!rotation_.allFinite() || !translation_.allFinite()) return false;
    const double ortho = (rotation_ * rotation_.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tolerance && std::abs(rotation_.determinant() - 1.0) <= tolerance;
  }

  std::array<double, 12> to_row_major() const {
    std::array<double, 12> v{};
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) v[row * 4 + col] = rotation_(row, col);
      v[row * 4 + 3] = translation_(row);
    }
    return v;
  }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

struct Pose4DoF {
  Vec3 translation = Vec3::Zero();
  double yaw = 0.0;
};

struct CameraIntrinsics {
  double fx = 721.5377;
  double fy = 721.5377;
  double cx = 609.5593;
  double cy = 172.854;
  int image_width = 1242;
  int image_height = 375;

  bool is_valid() const {
    return fx > 0.0 && fy > 0.0 && cx >= 0.0 && cy >= 0.0 && cx < image_width &&
           cy < image_height;
  }
};

// Frame i -> frame 0 transforms, indexed by frame.
using EgoTrajectory = std::vector<RigidTransform>;

inline Vec3 to_global_translation(const Vec3& t, const RigidTransform& frame_to_global) {
  return frame_to_global.apply(t);
}

inline Vec3 to_local_translation(const Vec3& t_global, const RigidTransform& frame_to_global) {
  return frame_to_global.inverse().apply(t_global);
}

// Maps a yaw expressed in the source frame of `transform` into its target
// frame by rotating the heading vector and measuring it on the ground plane.
inline double transform_yaw(double yaw, const RigidTransform& transform) {
  const Vec3 heading = transform.rotation() * (yaw_rotation(yaw) * Vec3::UnitX());
  const double horizontal = std::hypot(heading.x(), heading.z());
  if (horizontal < 1e-6) {
    throw Error(ErrorCode::DegenerateHeading, "heading is (near) vertical after transform");
  }
  return wrap_angle(heading_angle(heading.x(), heading.z()));
}

inline double to_global_yaw(double yaw, const RigidTransform& frame_to_global) {
  return transform_yaw(yaw, frame_to_global);
}

inline double to_local_yaw(double yaw_global, const RigidTransform& frame_to_global) {
  return transform_yaw(yaw_global, frame_to_global.inverse());
}

struct ProjectedPoint {
  Vec2 pixel = Vec2::Zero();
  bool valid = false;
};

inline ProjectedPoint project_point(const Vec3& p, const CameraIntrinsics& k) {
  ProjectedPoint out;
  if (!(p.z() > 1e-6)) return out;
  out.pixel = {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
  out.valid = out.pixel.x() >= 0.0 && out.pixel.y() >= 0.0 && out.pixel.x() < k.image_width &&
              out.pixel.y() < k.image_height;
  return out;
}

inline std::vector<ProjectedPoint> project_points(std::span<const Vec3> points,
                                                  const CameraIntrinsics& k) {
  std::vector<ProjectedPoint> out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(project_point(p, k));
  return out;
}

}  // namespace pseudolabel
