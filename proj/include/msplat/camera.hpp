#pragma once

#include <msplat/lie.hpp>

namespace msplat {

/// Pinhole intrinsics, pixels. No distortion model.
struct Camera {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  /// Throws std::invalid_argument unless fx, fy > 0 and the principal point
  /// lies inside the image.
  void validate() const;

  /// Projects a camera-frame point with positive depth to pixels.
  Vec2 project(const Vec3& x_cam) const {
    return Vec2(fx * x_cam.x() / x_cam.z() + cx,
                fy * x_cam.y() / x_cam.z() + cy);
  }

  bool contains(const Vec2& uv) const {
    return uv.x() >= 0.0 && uv.x() < width && uv.y() >= 0.0 && uv.y() < height;
  }
};

}  // namespace msplat
