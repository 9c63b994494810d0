#include "msplat/pose_graph.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace msplat {

namespace {
constexpr double kMinDepth = 1e-8;
}

Residual6 prior_residual(const SE3Pose& pose, const PosePrior& prior) {
  Residual6 r;
  r.head<3>() = so3_log(prior.pose.rotation.inverse() * pose.rotation);
  r.tail<3>() = prior.pose.translation - pose.translation;
  return r;
}

Mat6 prior_jacobian(const SE3Pose& pose, const PosePrior& prior) {
  const AxisAngle e_q = so3_log(prior.pose.rotation.inverse() * pose.rotation);
  Mat6 jac = Mat6::Zero();
  jac.block<3, 3>(0, 0) = so3_right_jacobian_inv(e_q);
  jac.block<3, 3>(3, 3) = -Mat3::Identity();
  return jac;
}

Residual6 relative_residual(const SE3Pose& pose_i, const SE3Pose& pose_j,
                            const RelativeMeasurement& meas) {
  const Rotation rij_inv = meas.i_from_j.rotation.inverse();
  const Rotation ri_inv = pose_i.rotation.inverse();
  Residual6 r;
  r.head<3>() = so3_log(rij_inv * ri_inv * pose_j.rotation);
  r.tail<3>() = rij_inv * (ri_inv * (pose_j.translation - pose_i.translation)) -
                rij_inv * meas.i_from_j.translation;
  return r;
}

RelativeJacobians relative_jacobians(const SE3Pose& pose_i,
                                     const SE3Pose& pose_j,
                                     const RelativeMeasurement& meas) {
  const Rotation rij_inv = meas.i_from_j.rotation.inverse();
  const Rotation ri_inv = pose_i.rotation.inverse();
  const AxisAngle e_q = so3_log(rij_inv * ri_inv * pose_j.rotation);
  const Mat3 jr_inv = so3_right_jacobian_inv(e_q);

  const Mat3 rij_t = rij_inv.matrix();
  const Mat3 rij_t_ri_t = (rij_inv * ri_inv).matrix();
  const Vec3 v_i = ri_inv * (pose_j.translation - pose_i.translation);

  RelativeJacobians out;
  out.d_rot_i.setZero();
  out.d_rot_i.topRows<3>() = -jr_inv * (pose_j.rotation.inverse() * pose_i.rotation).matrix();
  out.d_rot_i.bottomRows<3>() = rij_t * skew(v_i);

  out.d_rot_j.setZero();
  out.d_rot_j.topRows<3>() = jr_inv;

  out.d_trans_i.setZero();
  out.d_trans_i.bottomRows<3>() = -rij_t_ri_t;

  out.d_trans_j.setZero();
  out.d_trans_j.bottomRows<3>() = rij_t_ri_t;
  return out;
}

std::optional<Vec2> reprojection_residual(const SE3Pose& pose,
                                          const Camera& cam, const Vec3& X,
                                          const Vec2& uv) {
  const Vec3 x_cam = pose.rotation.inverse() * (X - pose.translation);
  if (x_cam.z() <= kMinDepth) return std::nullopt;
  return cam.project(x_cam) - uv;
}

std::optional<ReprojectionJacobians> reprojection_jacobians(
    const SE3Pose& pose, const Camera& cam, const Vec3& X, const Vec2& uv) {
  const Mat3 r_t = pose.rotation.inverse().matrix();
  const Vec3 x_cam = r_t * (X - pose.translation);
  if (x_cam.z() <= kMinDepth) return std::nullopt;

  const double z_inv = 1.0 / x_cam.z();
  Mat23 proj;
  proj << cam.fx * z_inv, 0.0, -cam.fx * x_cam.x() * z_inv * z_inv,  //
      0.0, cam.fy * z_inv, -cam.fy * x_cam.y() * z_inv * z_inv;

  ReprojectionJacobians out;
  out.residual = cam.project(x_cam) - uv;
  out.d_rot = proj * skew(x_cam);
  out.d_point = proj * r_t;
  out.d_trans = -out.d_point;
  return out;
}

std::optional<Vec3> triangulate_dlt(const std::vector<PosedObservation>& obs,
                                    const TriangulationOptions& options) {
  if (obs.size() < 2) return std::nullopt;

  bool distinct_centers = false;
  for (size_t a = 0; a < obs.size() && !distinct_centers; ++a) {
    for (size_t b = a + 1; b < obs.size(); ++b) {
      if ((obs[a].world_from_camera.translation -
           obs[b].world_from_camera.translation)
              .norm() > 1e-9) {
        distinct_centers = true;
        break;
      }
    }
  }
  if (!distinct_centers) return std::nullopt;

  Eigen::MatrixXd a_mat(2 * obs.size(), 4);
  for (size_t k = 0; k < obs.size(); ++k) {
    const PosedObservation& o = obs[k];
    const Mat3 r_t = o.world_from_camera.rotation.inverse().matrix();
    Eigen::Matrix3d intr;
    intr << o.camera.fx, 0.0, o.camera.cx,  //
        0.0, o.camera.fy, o.camera.cy,      //
        0.0, 0.0, 1.0;
    Eigen::Matrix<double, 3, 4> proj;
    proj.leftCols<3>() = intr * r_t;
    proj.col(3) = -intr * r_t * o.world_from_camera.translation;
    a_mat.row(2 * k) = o.uv.x() * proj.row(2) - proj.row(0);
    a_mat.row(2 * k + 1) = o.uv.y() * proj.row(2) - proj.row(1);
  }
  for (Eigen::Index r = 0; r < a_mat.rows(); ++r) {
    const double n = a_mat.row(r).norm();
    if (n > 0.0) a_mat.row(r) /= n;
  }

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a_mat, Eigen::ComputeFullV);
  const Vec4 h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-12 * h.head<3>().norm()) return std::nullopt;
  const Vec3 point = h.head<3>() / h(3);
  if (!point.allFinite()) return std::nullopt;

  for (const PosedObservation& o : obs) {
    const auto r = reprojection_residual(o.world_from_camera, o.camera, point, o.uv);
    if (!r || r->norm() > options.max_reprojection_px) return std::nullopt;
  }

  double max_angle = 0.0;
  for (size_t a = 0; a < obs.size(); ++a) {
    const Vec3 da = (point - obs[a].world_from_camera.translation).normalized();
    for (size_t b = a + 1; b < obs.size(); ++b) {
      const Vec3 db = (point - obs[b].world_from_camera.translation).normalized();
      max_angle = std::max(max_angle, std::atan2(da.cross(db).norm(), da.dot(db)));
    }
  }
  if (max_angle < options.min_angle_deg * M_PI / 180.0) return std::nullopt;
  return point;
}

}  // namespace msplat
