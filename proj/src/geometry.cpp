#include "scevo/geometry.hpp"

#include <cmath>
#include <sstream>

#include "scevo/error.hpp"

namespace scevo {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kNonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kEmptyTracks: return "EmptyTracks";
    case ErrorCode::kEmptyReferenceSet: return "EmptyReferenceSet";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kEmptyFrame: return "EmptyFrame";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kDivergedCost: return "DivergedCost";
    case ErrorCode::kInfeasibleSpec: return "InfeasibleSpec";
    case ErrorCode::kUnknownPatch: return "UnknownPatch";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kNoAssociations: return "NoAssociations";
    case ErrorCode::kNoMotion: return "NoMotion";
    case ErrorCode::kMissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::kChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::kParse: return "Parse";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

bool Pose::is_valid(double tol) const {
  if (!rotation_.allFinite() || !translation_.allFinite()) return false;
  const double ortho = (rotation_.transpose() * rotation_ - Mat3::Identity())
                           .cwiseAbs()
                           .maxCoeff();
  return ortho <= tol && std::abs(rotation_.determinant() - 1.0) <= tol;
}

Pose Pose::orthonormalized() const {
  Eigen::Quaterniond q(rotation_);
  q.normalize();
  return {q.toRotationMatrix(), translation_};
}

void validate(const CameraIntrinsics& camera) {
  if (!(camera.fx > 0.0) || !(camera.fy > 0.0) || !std::isfinite(camera.cx) ||
      !std::isfinite(camera.cy)) {
    raise(ErrorCode::kInvalidArgument,
          "camera intrinsics require fx > 0 and fy > 0");
  }
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 so3_exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = skew(phi);
  double a, b;
  if (theta2 < 1e-10) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 so3_log(const Mat3& rotation) {
  // Quaternion route stays well conditioned near pi.
  Eigen::Quaterniond q(rotation);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double sin_half = v.norm();
  if (sin_half < 1e-12) {
    return 2.0 * v / q.w();
  }
  const double theta = 2.0 * std::atan2(sin_half, q.w());
  return theta / sin_half * v;
}

namespace {

// Left Jacobian of SO(3); maps rho to the translation of exp(xi).
Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = skew(phi);
  double b, c;
  if (theta2 < 1e-10) {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    const double theta = std::sqrt(theta2);
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + b * k + c * k * k;
}

}  // namespace

Pose se3_exp(const Twist& xi) {
  if (xi.phi.isZero(0.0) && xi.rho.isZero(0.0)) return Pose::identity();
  return {so3_exp(xi.phi), so3_left_jacobian(xi.phi) * xi.rho};
}

Twist se3_log(const Pose& pose) {
  const Vec3 phi = so3_log(pose.rotation());
  const Vec3 rho = so3_left_jacobian(phi).inverse() * pose.translation();
  return {rho, phi};
}

Vec3 backproject(const CameraIntrinsics& camera, const Vec2& uv,
                 double depth) {
  if (!(depth > 0.0)) {
    std::ostringstream msg;
    msg << "backproject: depth must be positive, got " << depth;
    raise(ErrorCode::kNonPositiveDepth, msg.str());
  }
  return depth * camera.ray(uv);
}

Vec2 project(const CameraIntrinsics& camera, const Vec3& point_camera) {
  if (!(point_camera.z() > 0.0)) {
    raise(ErrorCode::kBehindCamera, "project: point is behind the camera");
  }
  return {camera.fx * point_camera.x() / point_camera.z() + camera.cx,
          camera.fy * point_camera.y() / point_camera.z() + camera.cy};
}

}  // namespace scevo
