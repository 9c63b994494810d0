#pragma once

#include <msplat/lie.hpp>

#include <string>
#include <vector>

namespace msplat {

/// Time-ordered pose samples, world <- lidar. Immutable after load; all
/// queries are read-only.
struct Trajectory {
  std::vector<SE3Pose> samples;  // strictly increasing timestamps, all set

  double start_time() const { return *samples.front().timestamp; }
  double end_time() const { return *samples.back().timestamp; }
};

/// Mount transform between the two sensors: lidar <- camera.
struct Extrinsic {
  SE3Pose lidar_from_camera;
};

/// Absolute pose anchor for one camera, world <- camera.
///
/// The information matrix weights the 6-vector residual in [rotation (3),
/// translation (3)] order; default is identity (isotropic unit weights).
struct PosePrior {
  int camera_id = -1;
  SE3Pose pose;
  Mat6 information = Mat6::Identity();
};

enum class TrajectoryFormat { kTum };

/// Loads a trajectory file. Throws std::runtime_error naming the offending
/// line for malformed rows and non-increasing or duplicate timestamps.
Trajectory load_trajectory(const std::string& path,
                           TrajectoryFormat format = TrajectoryFormat::kTum);

/// Writes the trajectory in the same format load_trajectory reads, with
/// enough digits that a reload reproduces every field bitwise.
void save_trajectory(const std::string& path, const Trajectory& traj,
                     TrajectoryFormat format = TrajectoryFormat::kTum);

/// Pose at time t: translation linearly interpolated between the bracketing
/// samples, rotation slerped with the same fraction. A query at a sample
/// timestamp returns that sample exactly. Throws std::domain_error outside
/// [start_time, end_time] (no extrapolation) or with fewer than 2 samples.
SE3Pose interpolate_pose(const Trajectory& traj, double t);

/// Camera pose prior at time t: world <- camera = interpolated world <- lidar
/// composed with the lidar <- camera extrinsic. camera_id is left for the
/// caller to assign. Errors propagate from interpolate_pose.
PosePrior camera_prior(const Trajectory& traj, const Extrinsic& extrinsic,
                       double t);

}  // namespace msplat
