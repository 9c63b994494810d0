#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "msplat/camera.hpp"
#include "msplat/image.hpp"
#include "msplat/lie.hpp"

namespace msplat {

using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Real spherical-harmonics constants: degree-0 basis value and the shared
/// magnitude of the three degree-1 basis functions.
inline constexpr double kSh0 = 0.28209479177387814;
inline constexpr double kSh1 = 0.4886025119029199;

/// Anisotropic 3D Gaussian with view-dependent color.
struct GaussianPrimitive {
  Vec3 mean = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();  // scales stay positive via exp
  Rotation orientation;
  double opacity_logit = 0.0;  // effective opacity = sigmoid(logit) in (0,1)
  /// Row = color channel. Column 0 multiplies the degree-0 basis; columns
  /// 1..3 multiply the degree-1 basis functions (-y, z, -x) * kSh1.
  Mat34 sh = Mat34::Zero();

  Vec3 scales() const {
    return Vec3(std::exp(log_scale.x()), std::exp(log_scale.y()),
                std::exp(log_scale.z()));
  }
  double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
  Mat3 covariance() const {
    const Vec3 s = scales();
    const Mat3 r = orientation.matrix();
    return r * s.cwiseProduct(s).asDiagonal() * r.transpose();
  }
};

struct ViewCamera {
  Camera camera;
  SE3Pose camera_from_world;  // maps world points into the camera frame

  /// Camera position in world coordinates.
  Vec3 camera_center() const {
    return -(camera_from_world.rotation.matrix().transpose() *
             camera_from_world.translation);
  }
};

struct ProjectedGaussian {
  Vec2 mean;    // pixel coordinates
  Mat2 cov;     // 2D covariance incl. the 0.3 px^2 anti-aliasing floor
  double depth; // camera-frame z, meters
};

/// Perspective projection of the Gaussian via the affine approximation at the
/// transformed mean. nullopt when the camera-frame depth is at or behind the
/// 0.01 m near plane (culled).
std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g,
                                                  const ViewCamera& view);

/// World-frame unit normal: the orientation column of the smallest effective
/// scale (lowest index on ties), sign flipped so the angle with the viewing
/// ray exceeds 90 degrees (faces the camera).
Vec3 gaussian_normal(const GaussianPrimitive& g, const ViewCamera& view);

/// View-dependent RGB for a unit direction from the primitive mean to the
/// camera center: degree-1 SH plus 0.5, clamped to [0,1] per channel so the
/// alpha-blended image stays in range.
Vec3 gaussian_color(const GaussianPrimitive& g, const Vec3& dir_to_camera);

struct RenderBuffers {
  Image color;   // H x W x 3 in [0,1]
  Image normal;  // H x W x 3, camera frame, unnormalized alpha blend
  Image alpha;   // H x W x 1, equals 1 - final transmittance

  /// Forward state retained for render_backward.
  struct SplatCache {
    int id = 0;  // index into the scene vector
    double depth = 0.0;
    Vec2 mean2d = Vec2::Zero();
    Mat2 conic = Mat2::Zero();  // inverse 2D covariance
    Vec3 color = Vec3::Zero();  // clamped view-dependent RGB
    Vec3 normal_cam = Vec3::Zero();
    double opacity = 0.0;
  };
  std::vector<SplatCache> splats;  // front-to-back depth order, ties by id
  std::vector<int> contributors;   // flattened per-pixel indices into splats
  std::vector<int> contrib_offsets;  // size H*W + 1, row-major pixels
  std::vector<GaussianPrimitive> scene_snapshot;  // stale-buffer detection
  SE3Pose view_snapshot;
  Camera camera_snapshot;
};

/// Front-to-back alpha blend of color, camera-frame normals, and opacity.
/// Per pixel: alpha_i = o_i * G_i clamped to [0, 0.999], weight alpha_i * T_i
/// with T_i the product of (1 - alpha_j) over splats in front; blending stops
/// once T < 1e-4; a splat touches only pixels within its 3-sigma ellipse.
/// An empty scene yields all-zero buffers.
RenderBuffers render(const std::vector<GaussianPrimitive>& scene,
                     const ViewCamera& view);

/// Gradients w.r.t. the stored parameterization, indexed like the scene.
struct SceneGradients {
  std::vector<Vec3> d_mean;
  std::vector<Vec3> d_log_scale;
  std::vector<Vec3> d_rotation;  // right-multiplicative tangent, R <- R Exp(d)
  std::vector<double> d_opacity_logit;
  std::vector<Mat34> d_sh;
};

/// Exact reverse of the blend recurrence. Upstream gradient images may be
/// empty (treated as zero); non-empty ones must match the buffer shapes
/// (d_color H x W x 3, d_normal H x W x 3, d_alpha H x W x 1). Throws
/// std::logic_error when the scene or view no longer matches the snapshots in
/// buffers (stale buffers), std::invalid_argument on shape mismatch.
SceneGradients render_backward(const std::vector<GaussianPrimitive>& scene,
                               const ViewCamera& view,
                               const RenderBuffers& buffers,
                               const Image& d_color, const Image& d_normal,
                               const Image& d_alpha);

/// Moves every primitive by the rigid transform g: means and orientations
/// compose with g, and the degree-1 SH band rotates so view-dependent color
/// is preserved (color'(R d) = color(d)).
void transform_scene(std::vector<GaussianPrimitive>& scene, const SE3Pose& g);

}  // namespace msplat
