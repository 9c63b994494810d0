#include "msplat/trajectory.hpp"

#include "msplat/io/tum.hpp"

#include <algorithm>
#include <stdexcept>

namespace msplat {

Trajectory load_trajectory(const std::string& path, TrajectoryFormat format) {
  switch (format) {
    case TrajectoryFormat::kTum:
      return io::load_tum(path);
  }
  throw std::invalid_argument("unknown trajectory format");
}

void save_trajectory(const std::string& path, const Trajectory& traj,
                     TrajectoryFormat format) {
  switch (format) {
    case TrajectoryFormat::kTum:
      io::save_tum(path, traj);
      return;
  }
  throw std::invalid_argument("unknown trajectory format");
}

SE3Pose interpolate_pose(const Trajectory& traj, double t) {
  if (traj.samples.size() < 2) {
    throw std::domain_error("interpolation needs at least 2 trajectory samples");
  }
  if (t < traj.start_time() || t > traj.end_time()) {
    throw std::domain_error("query time " + std::to_string(t) +
                            " outside trajectory range [" +
                            std::to_string(traj.start_time()) + ", " +
                            std::to_string(traj.end_time()) + "]");
  }
  const auto upper = std::lower_bound(
      traj.samples.begin(), traj.samples.end(), t,
      [](const SE3Pose& p, double time) { return *p.timestamp < time; });
  if (*upper->timestamp == t) return *upper;

  const SE3Pose& b = *upper;
  const SE3Pose& a = *std::prev(upper);
  const double u = (t - *a.timestamp) / (*b.timestamp - *a.timestamp);
  SE3Pose out(quat_slerp(a.rotation, b.rotation, u),
              (1.0 - u) * a.translation + u * b.translation, t);
  return out;
}

PosePrior camera_prior(const Trajectory& traj, const Extrinsic& extrinsic,
                       double t) {
  const SE3Pose world_from_lidar = interpolate_pose(traj, t);
  PosePrior prior;
  prior.pose = se3_compose(world_from_lidar, extrinsic.lidar_from_camera);
  prior.pose.timestamp = t;
  return prior;
}

}  // namespace msplat
