#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>

namespace msplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;

/// Rotation vector (Lie-algebra element of SO(3)), radians. Right-handed.
using AxisAngle = Vec3;

/// Skew-symmetric (hat) matrix of v, so that skew(v) * u = v x u.
Mat3 skew(const Vec3& v);

/// Unit quaternion with the double cover canonicalized to w >= 0.
///
/// Every operation that returns a Rotation renormalizes, so the unit-norm
/// invariant holds to machine precision even after long composition chains.
class Rotation {
 public:
  /// Identity rotation.
  Rotation() : q_(1.0, 0.0, 0.0, 0.0) {}

  /// From quaternion components; normalized and canonicalized on entry.
  Rotation(double w, double x, double y, double z);
  explicit Rotation(const Eigen::Quaterniond& q);
  explicit Rotation(const Mat3& m);

  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }
  const Eigen::Quaterniond& quat() const { return q_; }

  Mat3 matrix() const { return q_.toRotationMatrix(); }

  Rotation inverse() const;
  Rotation operator*(const Rotation& rhs) const;
  Vec3 operator*(const Vec3& v) const { return q_ * v; }

  /// Geodesic distance to another rotation, radians in [0, pi].
  double angle_to(const Rotation& other) const;

  bool is_approx(const Rotation& other, double tol = 1e-12) const {
    return angle_to(other) <= tol;
  }

 private:
  Eigen::Quaterniond q_;  // unit, w >= 0
};

/// Rigid transform: x_world = rotation * x_local + translation.
/// Timestamp is optional; only trajectory samples carry one.
struct SE3Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  std::optional<double> timestamp;

  SE3Pose() = default;
  SE3Pose(const Rotation& r, const Vec3& t) : rotation(r), translation(t) {}
  SE3Pose(const Rotation& r, const Vec3& t, double ts)
      : rotation(r), translation(t), timestamp(ts) {}

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
};

/// Exponential map of SO(3) (Rodrigues). Second-order Taylor branch below
/// 1e-6 rad. Throws std::invalid_argument on non-finite input.
Rotation so3_exp(const AxisAngle& omega);

/// Principal logarithm of SO(3): ||result|| <= pi.
///
/// At angle pi the axis sign is ambiguous (R(pi, a) = R(pi, -a)); the axis is
/// extracted from the largest diagonal entry of the rotation matrix and the
/// corresponding component is taken nonnegative. so3_log(so3_exp(w)) == w for
/// ||w|| < pi.
AxisAngle so3_log(const Rotation& r);

/// Inverse of the right Jacobian of SO(3):
///   Jr^-1(w) = I + 1/2 w^ + (1/||w||^2 - (1+cos||w||)/(2||w|| sin||w||)) (w^)^2
/// with the Taylor fallback I + 1/2 w^ + 1/12 (w^)^2 for ||w|| < 1e-4.
/// Satisfies d/dd Log(Exp(w) Exp(d)) |_{d=0} = Jr^-1(w).
/// Throws std::domain_error outside the injectivity radius (||w|| >= pi).
Mat3 so3_right_jacobian_inv(const AxisAngle& omega);

/// Spherical linear interpolation along the shorter arc at constant angular
/// velocity; falls back to normalized lerp when the quaternions are nearly
/// identical (dot > 1 - 1e-9). Throws std::domain_error for t outside [0,1].
Rotation quat_slerp(const Rotation& q0, const Rotation& q1, double t);

/// Group composition (a then b applied in a's frame): result maps
/// x -> a.R * (b.R * x + b.t) + a.t. Timestamp left unset.
SE3Pose se3_compose(const SE3Pose& a, const SE3Pose& b);

SE3Pose se3_inverse(const SE3Pose& a);

}  // namespace msplat
