#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace scevo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

/// se(3) tangent vector. `rho` is the translational part, `phi` the rotation
/// vector (radians). Stacked order is [rho; phi].
struct Twist {
  Vec3 rho = Vec3::Zero();
  Vec3 phi = Vec3::Zero();

  Twist() = default;
  Twist(const Vec3& rho_, const Vec3& phi_) : rho(rho_), phi(phi_) {}
  explicit Twist(const Vec6& v) : rho(v.head<3>()), phi(v.tail<3>()) {}

  Vec6 vector() const {
    Vec6 v;
    v << rho, phi;
    return v;
  }
};

/// Rigid camera-to-world transform: X_w = R * X_c + t.
class Pose {
 public:
  Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Pose(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static Pose identity() { return {}; }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Pose inverse() const {
    const Mat3 rt = rotation_.transpose();
    return {rt, -(rt * translation_)};
  }

  Pose operator*(const Pose& other) const {
    return {rotation_ * other.rotation_,
            rotation_ * other.translation_ + translation_};
  }

  Vec3 operator*(const Vec3& p) const { return rotation_ * p + translation_; }

  /// Orthonormality and handedness within `tol`.
  bool is_valid(double tol = 1e-9) const;

  /// Same pose with the rotation projected back onto SO(3).
  Pose orthonormalized() const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  /// Normalized ray n = [(u - cx)/fx, (v - cy)/fy, 1].
  Vec3 ray(const Vec2& uv) const {
    return {(uv.x() - cx) / fx, (uv.y() - cy) / fy, 1.0};
  }
};

/// x -> scale * R x + t.
struct Sim3 {
  double scale = 1.0;
  Pose pose;

  Vec3 operator*(const Vec3& p) const {
    return scale * (pose.rotation() * p) + pose.translation();
  }
};

void validate(const CameraIntrinsics& camera);

Mat3 skew(const Vec3& v);

Mat3 so3_exp(const Vec3& phi);
Vec3 so3_log(const Mat3& rotation);

/// Exponential map with the SE(3) left Jacobian applied to rho.
Pose se3_exp(const Twist& xi);
Twist se3_log(const Pose& pose);

/// Left-multiplicative update T <- exp(xi) * T.
inline Pose retract(const Pose& pose, const Twist& xi) {
  return se3_exp(xi) * pose;
}

/// Camera-frame point d * n. Throws NonPositiveDepth for d <= 0.
Vec3 backproject(const CameraIntrinsics& camera, const Vec2& uv, double depth);

/// Pinhole projection. Throws BehindCamera for Z <= 0.
Vec2 project(const CameraIntrinsics& camera, const Vec3& point_camera);

inline Vec3 transform_to_world(const Pose& pose, const Vec3& point_camera) {
  return pose.rotation() * point_camera + pose.translation();
}

}  // namespace scevo
