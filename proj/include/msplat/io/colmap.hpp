#pragma once

#include <string>
#include <utility>
#include <vector>

#include "msplat/camera.hpp"
#include "msplat/lie.hpp"

namespace msplat {

/// PINHOLE row of cameras.txt. Other camera models are rejected on load.
struct ColmapCamera {
  int camera_id = 1;
  Camera camera;
};

/// One registered image. The stored pose maps world points into the camera
/// frame, which is the images.txt convention (scalar-first quaternion).
struct ColmapImage {
  int image_id = 1;
  SE3Pose camera_from_world;
  int camera_id = 1;
  std::string name;
  std::vector<Vec2> points2d;
  std::vector<long long> point3d_ids;  // -1 marks an unmatched keypoint

  SE3Pose world_from_camera() const { return se3_inverse(camera_from_world); }
};

struct ColmapPoint {
  long long point3d_id = 1;
  Vec3 xyz = Vec3::Zero();
  Eigen::Matrix<int, 3, 1> rgb = Eigen::Matrix<int, 3, 1>(128, 128, 128);
  double error = 0.0;
  std::vector<std::pair<int, int>> track;  // (image id, point2d index)
};

struct ColmapModel {
  std::vector<ColmapCamera> cameras;
  std::vector<ColmapImage> images;
  std::vector<ColmapPoint> points;
};

/// Reads cameras.txt, images.txt, points3D.txt from `dir`. Tolerates comment
/// lines and blank lines; throws std::runtime_error naming the file and line
/// for anything malformed and std::runtime_error for non-PINHOLE cameras.
ColmapModel load_colmap_model(const std::string& dir);

/// Writes the three text files with enough digits for a lossless reload.
void save_colmap_model(const std::string& dir, const ColmapModel& model);

}  // namespace msplat
