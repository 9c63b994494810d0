#include "msplat/lie.hpp"

#include <cmath>
#include <stdexcept>

namespace msplat {

namespace {
constexpr double kExpLogTaylorThreshold = 1e-6;
constexpr double kJrInvTaylorThreshold = 1e-4;
}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

Rotation::Rotation(double w, double x, double y, double z) : q_(w, x, y, z) {
  const double n = q_.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("Rotation: quaternion norm must be positive and finite");
  }
  // Idempotent: an already-unit quaternion passes through bitwise unchanged,
  // so normalize-load-save round trips are exact.
  if (std::abs(n - 1.0) > 1e-12) q_.coeffs() /= n;
  if (q_.w() < 0.0) q_.coeffs() = -q_.coeffs();
}

Rotation::Rotation(const Eigen::Quaterniond& q)
    : Rotation(q.w(), q.x(), q.y(), q.z()) {}

Rotation::Rotation(const Mat3& m) : Rotation(Eigen::Quaterniond(m)) {}

Rotation Rotation::inverse() const { return Rotation(q_.conjugate()); }

Rotation Rotation::operator*(const Rotation& rhs) const {
  return Rotation(q_ * rhs.q_);
}

double Rotation::angle_to(const Rotation& other) const {
  // atan2 form stays accurate near 0 where acos(dot) loses half the digits.
  const Eigen::Quaterniond rel = q_.conjugate() * other.q_;
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

Rotation so3_exp(const AxisAngle& omega) {
  if (!omega.allFinite()) {
    throw std::invalid_argument("so3_exp: non-finite rotation vector");
  }
  const double theta = omega.norm();
  double half_sinc;  // sin(theta/2) / theta
  if (theta < kExpLogTaylorThreshold) {
    half_sinc = 0.5 - theta * theta / 48.0;
  } else {
    half_sinc = std::sin(0.5 * theta) / theta;
  }
  const Vec3 v = half_sinc * omega;
  return Rotation(std::cos(0.5 * theta), v.x(), v.y(), v.z());
}

AxisAngle so3_log(const Rotation& r) {
  const double w = r.w();  // >= 0 by canonicalization, so theta in [0, pi]
  const Vec3 v(r.x(), r.y(), r.z());
  const double vn = v.norm();

  if (vn < kExpLogTaylorThreshold) {
    // theta/vn = 2*atan2(vn, w)/vn expanded around vn = 0.
    return (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w)) * v;
  }
  if (w < 1e-9) {
    // Angle within ~2e-9 of pi: the quaternion vector part no longer fixes
    // the axis sign. Extract the axis from the largest diagonal entry of R
    // and take that component nonnegative (the documented convention; both
    // antipodal axes represent the same rotation).
    const Mat3 m = r.matrix();
    int k = 0;
    m.diagonal().maxCoeff(&k);
    Vec3 axis;
    axis[k] = std::sqrt(std::max(0.0, (m(k, k) + 1.0) / 2.0));
    const int i = (k + 1) % 3;
    const int j = (k + 2) % 3;
    axis[i] = (m(k, i) + m(i, k)) / (4.0 * axis[k]);
    axis[j] = (m(k, j) + m(j, k)) / (4.0 * axis[k]);
    axis.normalize();
    const double theta = 2.0 * std::atan2(vn, w);
    return theta * axis;
  }
  const double theta = 2.0 * std::atan2(vn, w);
  return (theta / vn) * v;
}

Mat3 so3_right_jacobian_inv(const AxisAngle& omega) {
  if (!omega.allFinite()) {
    throw std::invalid_argument("so3_right_jacobian_inv: non-finite input");
  }
  const double theta = omega.norm();
  if (theta >= M_PI) {
    throw std::domain_error(
        "so3_right_jacobian_inv: ||omega|| >= pi (outside injectivity radius)");
  }
  const Mat3 hat = skew(omega);
  if (theta < kJrInvTaylorThreshold) {
    return Mat3::Identity() + 0.5 * hat + (1.0 / 12.0) * (hat * hat);
  }
  const double c = 1.0 / (theta * theta) -
                   (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * hat + c * (hat * hat);
}

Rotation quat_slerp(const Rotation& q0, const Rotation& q1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::domain_error("quat_slerp: t must lie in [0, 1]");
  }
  Eigen::Quaterniond a = q0.quat();
  Eigen::Quaterniond b = q1.quat();
  double dot = a.dot(b);
  if (dot < 0.0) {  // shorter arc
    b.coeffs() = -b.coeffs();
    dot = -dot;
  }
  if (dot > 1.0 - 1e-9) {
    Eigen::Quaterniond out;
    out.coeffs() = (1.0 - t) * a.coeffs() + t * b.coeffs();
    return Rotation(out);
  }
  const double omega = std::acos(std::min(1.0, dot));
  const double s = std::sin(omega);
  const double w0 = std::sin((1.0 - t) * omega) / s;
  const double w1 = std::sin(t * omega) / s;
  Eigen::Quaterniond out;
  out.coeffs() = w0 * a.coeffs() + w1 * b.coeffs();
  return Rotation(out);
}

SE3Pose se3_compose(const SE3Pose& a, const SE3Pose& b) {
  return SE3Pose(a.rotation * b.rotation,
                 a.rotation * b.translation + a.translation);
}

SE3Pose se3_inverse(const SE3Pose& a) {
  const Rotation rinv = a.rotation.inverse();
  return SE3Pose(rinv, -(rinv * a.translation));
}

}  // namespace msplat
