#include "msplat/splat.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "msplat/parallel.hpp"

namespace msplat {

namespace {

constexpr double kNearPlane = 0.01;         // meters
constexpr double kCovFloor = 0.3;           // px^2 anti-aliasing diagonal
constexpr double kAlphaMax = 0.999;
constexpr double kMinTransmittance = 1e-4;  // blend termination
constexpr double kFootprintMahaSq = 9.0;    // 3-sigma ellipse
// Reductions run over this fixed chunk grid regardless of worker count, so
// gradient sums are bit-stable across thread counts.
constexpr int kReduceChunks = 16;

Mat23 projection_jacobian(const Camera& cam, const Vec3& t) {
  const double iz = 1.0 / t.z();
  Mat23 j;
  j << cam.fx * iz, 0.0, -cam.fx * t.x() * iz * iz,
       0.0, cam.fy * iz, -cam.fy * t.y() * iz * iz;
  return j;
}

int smallest_scale_axis(const Vec3& s) {
  int k = 0;
  if (s.y() < s.x()) k = 1;
  if (s.z() < s(k)) k = 2;  // strict comparisons: lowest index wins ties
  return k;
}

/// Basis weights multiplying the four stored coefficients of one channel.
Vec4 sh_basis(const Vec3& dir_to_camera) {
  return Vec4(kSh0, -kSh1 * dir_to_camera.y(), kSh1 * dir_to_camera.z(),
              -kSh1 * dir_to_camera.x());
}

Vec3 sh_raw_color(const Mat34& sh, const Vec4& basis) {
  return sh * basis + Vec3::Constant(0.5);
}

struct AlphaEval {
  double maha;
  double g;
  double alpha;
};

AlphaEval splat_alpha(const RenderBuffers::SplatCache& s, const Vec2& pix) {
  const Vec2 d = pix - s.mean2d;
  const Vec2 cd = s.conic * d;
  const double maha = d.dot(cd);
  const double g = std::exp(-0.5 * maha);
  double alpha = s.opacity * g;
  if (alpha > kAlphaMax) alpha = kAlphaMax;
  return {maha, g, alpha};
}

int chunk_begin(int rows, int chunk) {
  const int per = (rows + kReduceChunks - 1) / kReduceChunks;
  return std::min(rows, chunk * per);
}

bool bitwise_equal(const Vec3& a, const Vec3& b) {
  return a.x() == b.x() && a.y() == b.y() && a.z() == b.z();
}

}  // namespace

std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g,
                                                  const ViewCamera& view) {
  const Vec3 t = view.camera_from_world * g.mean;
  if (t.z() <= kNearPlane) return std::nullopt;
  const Mat3 w = view.camera_from_world.rotation.matrix();
  const Mat23 j = projection_jacobian(view.camera, t);
  const Mat3 cov_cam = w * g.covariance() * w.transpose();
  Mat2 cov2 = j * cov_cam * j.transpose();
  cov2(0, 0) += kCovFloor;
  cov2(1, 1) += kCovFloor;
  return ProjectedGaussian{view.camera.project(t), cov2, t.z()};
}

Vec3 gaussian_normal(const GaussianPrimitive& g, const ViewCamera& view) {
  const int k = smallest_scale_axis(g.scales());
  Vec3 n = g.orientation.matrix().col(k);
  if (n.dot(view.camera_center() - g.mean) < 0.0) n = -n;
  return n;
}

Vec3 gaussian_color(const GaussianPrimitive& g, const Vec3& dir_to_camera) {
  const Vec3 raw = sh_raw_color(g.sh, sh_basis(dir_to_camera));
  return raw.cwiseMax(0.0).cwiseMin(1.0);
}

RenderBuffers render(const std::vector<GaussianPrimitive>& scene,
                     const ViewCamera& view) {
  view.camera.validate();
  const int width = view.camera.width;
  const int height = view.camera.height;

  RenderBuffers buf;
  buf.color = Image(height, width, 3);
  buf.normal = Image(height, width, 3);
  buf.alpha = Image(height, width, 1);
  buf.scene_snapshot = scene;
  buf.view_snapshot = view.camera_from_world;
  buf.camera_snapshot = view.camera;
  buf.contrib_offsets.assign(static_cast<size_t>(height) * width + 1, 0);
  if (scene.empty()) return buf;

  const Vec3 cam_center = view.camera_center();
  const Mat3 w_rot = view.camera_from_world.rotation.matrix();

  struct Extent {
    int x0, x1, y0, y1;
  };
  std::vector<RenderBuffers::SplatCache> splats;
  std::vector<Extent> extents;
  splats.reserve(scene.size());
  for (int i = 0; i < static_cast<int>(scene.size()); ++i) {
    const auto proj = project_gaussian(scene[i], view);
    if (!proj) continue;
    // Conservative axis-aligned bound of the 3-sigma ellipse.
    const double ex = 3.0 * std::sqrt(proj->cov(0, 0));
    const double ey = 3.0 * std::sqrt(proj->cov(1, 1));
    // Pixel (x, y) samples the point (x + 0.5, y + 0.5).
    const int x0 = std::max(0, static_cast<int>(std::ceil(proj->mean.x() - ex - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(proj->mean.x() + ex - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(proj->mean.y() - ey - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(proj->mean.y() + ey - 0.5)));
    if (x0 > x1 || y0 > y1) continue;

    const double det = proj->cov.determinant();
    Mat2 conic;
    conic << proj->cov(1, 1), -proj->cov(0, 1), -proj->cov(1, 0), proj->cov(0, 0);
    conic /= det;

    RenderBuffers::SplatCache cache;
    cache.id = i;
    cache.depth = proj->depth;
    cache.mean2d = proj->mean;
    cache.conic = conic;
    const Vec3 to_cam = cam_center - scene[i].mean;
    cache.color = gaussian_color(scene[i], to_cam / to_cam.norm());
    cache.normal_cam = w_rot * gaussian_normal(scene[i], view);
    cache.opacity = scene[i].opacity();
    splats.push_back(cache);
    extents.push_back({x0, x1, y0, y1});
  }

  // Global front-to-back order; ties broken by primitive id for determinism.
  std::vector<int> order(splats.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
    return splats[a].id < splats[b].id;
  });
  {
    std::vector<RenderBuffers::SplatCache> sorted_splats(splats.size());
    std::vector<Extent> sorted_extents(splats.size());
    for (size_t i = 0; i < order.size(); ++i) {
      sorted_splats[i] = splats[order[i]];
      sorted_extents[i] = extents[order[i]];
    }
    splats.swap(sorted_splats);
    extents.swap(sorted_extents);
  }

  // Row buckets preserve the depth order.
  std::vector<std::vector<int>> rows(height);
  for (int s = 0; s < static_cast<int>(splats.size()); ++s) {
    for (int y = extents[s].y0; y <= extents[s].y1; ++y) rows[y].push_back(s);
  }

  std::vector<std::vector<int>> row_contribs(height);
  parallel_chunks(kReduceChunks, [&](int chunk) {
    for (int y = chunk_begin(height, chunk); y < chunk_begin(height, chunk + 1); ++y) {
      auto& ids = row_contribs[y];
      for (int x = 0; x < width; ++x) {
        const Vec2 pix(x + 0.5, y + 0.5);
        Vec3 color = Vec3::Zero();
        Vec3 normal = Vec3::Zero();
        double trans = 1.0;
        int count = 0;
        for (const int s : rows[y]) {
          if (x < extents[s].x0 || x > extents[s].x1) continue;
          const AlphaEval a = splat_alpha(splats[s], pix);
          if (a.maha > kFootprintMahaSq) continue;
          ids.push_back(s);
          ++count;
          const double weight = a.alpha * trans;
          color += splats[s].color * weight;
          normal += splats[s].normal_cam * weight;
          trans *= 1.0 - a.alpha;
          if (trans < kMinTransmittance) break;
        }
        for (int c = 0; c < 3; ++c) {
          buf.color.at(y, x, c) = color(c);
          buf.normal.at(y, x, c) = normal(c);
        }
        buf.alpha.at(y, x, 0) = 1.0 - trans;
        buf.contrib_offsets[static_cast<size_t>(y) * width + x + 1] = count;
      }
    }
  });

  for (size_t p = 1; p < buf.contrib_offsets.size(); ++p) {
    buf.contrib_offsets[p] += buf.contrib_offsets[p - 1];
  }
  buf.contributors.reserve(buf.contrib_offsets.back());
  for (int y = 0; y < height; ++y) {
    buf.contributors.insert(buf.contributors.end(), row_contribs[y].begin(),
                            row_contribs[y].end());
  }
  buf.splats = std::move(splats);
  return buf;
}

namespace {

struct SplatAccum {
  Vec3 d_color = Vec3::Zero();
  Vec3 d_normal_cam = Vec3::Zero();
  double d_opacity = 0.0;
  Vec2 d_mean2d = Vec2::Zero();
  Mat2 d_cov2d = Mat2::Zero();
  bool touched = false;

  void add(const SplatAccum& o) {
    d_color += o.d_color;
    d_normal_cam += o.d_normal_cam;
    d_opacity += o.d_opacity;
    d_mean2d += o.d_mean2d;
    d_cov2d += o.d_cov2d;
    touched = touched || o.touched;
  }
};

void check_fresh(const std::vector<GaussianPrimitive>& scene,
                 const ViewCamera& view, const RenderBuffers& buffers) {
  const auto stale = [] { throw std::logic_error("render buffers are stale"); };
  if (scene.size() != buffers.scene_snapshot.size()) stale();
  for (size_t i = 0; i < scene.size(); ++i) {
    const auto& a = scene[i];
    const auto& b = buffers.scene_snapshot[i];
    if (!bitwise_equal(a.mean, b.mean) ||
        !bitwise_equal(a.log_scale, b.log_scale) ||
        a.orientation.quat().coeffs() != b.orientation.quat().coeffs() ||
        a.opacity_logit != b.opacity_logit || a.sh != b.sh) {
      stale();
    }
  }
  const auto& p = view.camera_from_world;
  const auto& q = buffers.view_snapshot;
  if (p.rotation.quat().coeffs() != q.rotation.quat().coeffs() ||
      !bitwise_equal(p.translation, q.translation)) {
    stale();
  }
  const auto& c = view.camera;
  const auto& d = buffers.camera_snapshot;
  if (c.fx != d.fx || c.fy != d.fy || c.cx != d.cx || c.cy != d.cy ||
      c.width != d.width || c.height != d.height) {
    stale();
  }
}

void check_gradient_shape(const Image& g, const Image& ref, int channels,
                          const char* name) {
  if (g.empty()) return;
  if (g.height() != ref.height() || g.width() != ref.width() ||
      g.channels() != channels) {
    throw std::invalid_argument(std::string("render_backward: ") + name +
                                " shape mismatch");
  }
}

}  // namespace

SceneGradients render_backward(const std::vector<GaussianPrimitive>& scene,
                               const ViewCamera& view,
                               const RenderBuffers& buffers,
                               const Image& d_color, const Image& d_normal,
                               const Image& d_alpha) {
  check_fresh(scene, view, buffers);
  check_gradient_shape(d_color, buffers.color, 3, "d_color");
  check_gradient_shape(d_normal, buffers.normal, 3, "d_normal");
  check_gradient_shape(d_alpha, buffers.alpha, 1, "d_alpha");

  const int width = buffers.alpha.width();
  const int height = buffers.alpha.height();
  const size_t n_splats = buffers.splats.size();

  SceneGradients grads;
  grads.d_mean.assign(scene.size(), Vec3::Zero());
  grads.d_log_scale.assign(scene.size(), Vec3::Zero());
  grads.d_rotation.assign(scene.size(), Vec3::Zero());
  grads.d_opacity_logit.assign(scene.size(), 0.0);
  grads.d_sh.assign(scene.size(), Mat34::Zero());
  if (n_splats == 0) return grads;

  // Per-pixel blend gradients pool into 2D accumulators per splat; the 3D
  // chain rule runs once per splat afterwards (both maps are linear).
  std::vector<std::vector<SplatAccum>> chunk_accums(kReduceChunks);
  parallel_chunks(kReduceChunks, [&](int chunk) {
    const int y_begin = chunk_begin(height, chunk);
    const int y_end = chunk_begin(height, chunk + 1);
    if (y_begin >= y_end) return;
    auto& accum = chunk_accums[chunk];
    accum.assign(n_splats, SplatAccum());
    std::vector<double> alphas, trans_before;
    for (int y = y_begin; y < y_end; ++y) {
      for (int x = 0; x < width; ++x) {
        const size_t p = static_cast<size_t>(y) * width + x;
        const int k0 = buffers.contrib_offsets[p];
        const int k1 = buffers.contrib_offsets[p + 1];
        if (k0 == k1) continue;
        Vec3 dc = Vec3::Zero();
        Vec3 dn = Vec3::Zero();
        double da = 0.0;
        if (!d_color.empty()) {
          dc = Vec3(d_color.at(y, x, 0), d_color.at(y, x, 1), d_color.at(y, x, 2));
        }
        if (!d_normal.empty()) {
          dn = Vec3(d_normal.at(y, x, 0), d_normal.at(y, x, 1), d_normal.at(y, x, 2));
        }
        if (!d_alpha.empty()) da = d_alpha.at(y, x, 0);
        if (dc.isZero(0.0) && dn.isZero(0.0) && da == 0.0) continue;

        const Vec2 pix(x + 0.5, y + 0.5);
        const int m = k1 - k0;
        alphas.resize(m);
        trans_before.resize(m);
        double trans = 1.0;
        for (int k = 0; k < m; ++k) {
          const auto& s = buffers.splats[buffers.contributors[k0 + k]];
          const AlphaEval a = splat_alpha(s, pix);
          alphas[k] = a.alpha;
          trans_before[k] = trans;
          trans *= 1.0 - a.alpha;
        }
        const double trans_final = trans;

        Vec3 suffix_color = Vec3::Zero();
        Vec3 suffix_normal = Vec3::Zero();
        for (int k = m - 1; k >= 0; --k) {
          const int si = buffers.contributors[k0 + k];
          const auto& s = buffers.splats[si];
          SplatAccum& acc = accum[si];
          acc.touched = true;
          const double alpha = alphas[k];
          const double t_k = trans_before[k];
          const double weight = alpha * t_k;
          const double inv_rest = 1.0 / (1.0 - alpha);

          acc.d_color += dc * weight;
          acc.d_normal_cam += dn * weight;

          double d_alpha_k = dc.dot(s.color * t_k - suffix_color * inv_rest) +
                             dn.dot(s.normal_cam * t_k - suffix_normal * inv_rest) +
                             da * trans_final * inv_rest;
          suffix_color += s.color * weight;
          suffix_normal += s.normal_cam * weight;

          // At the 0.999 clamp alpha is locally constant in o and G.
          const AlphaEval a = splat_alpha(s, pix);
          if (s.opacity * a.g > kAlphaMax) continue;
          acc.d_opacity += d_alpha_k * a.g;
          const double d_g = d_alpha_k * s.opacity;
          const Vec2 d = pix - s.mean2d;
          const Vec2 cd = s.conic * d;
          acc.d_mean2d += d_g * a.g * cd;
          acc.d_cov2d += (0.5 * d_g * a.g) * (cd * cd.transpose());
        }
      }
    }
  });

  std::vector<SplatAccum> total(n_splats);
  for (int chunk = 0; chunk < kReduceChunks; ++chunk) {
    const auto& accum = chunk_accums[chunk];
    if (accum.empty()) continue;
    for (size_t v = 0; v < n_splats; ++v) total[v].add(accum[v]);
  }

  const Vec3 cam_center = view.camera_center();
  const Mat3 w_rot = view.camera_from_world.rotation.matrix();
  for (size_t v = 0; v < n_splats; ++v) {
    const SplatAccum& acc = total[v];
    if (!acc.touched) continue;
    const int id = buffers.splats[v].id;
    const GaussianPrimitive& g = scene[id];
    const Mat3 rot = g.orientation.matrix();
    const Vec3 s = g.scales();

    // Opacity: o = sigmoid(logit).
    const double o = buffers.splats[v].opacity;
    grads.d_opacity_logit[id] += acc.d_opacity * o * (1.0 - o);

    // Color: clamped SH along the unit direction to the camera.
    const Vec3 to_cam = cam_center - g.mean;
    const double dist = to_cam.norm();
    const Vec3 dir = to_cam / dist;
    const Vec4 basis = sh_basis(dir);
    const Vec3 raw = sh_raw_color(g.sh, basis);
    Vec3 dc_raw = Vec3::Zero();
    for (int ch = 0; ch < 3; ++ch) {
      if (raw(ch) > 0.0 && raw(ch) < 1.0) dc_raw(ch) = acc.d_color(ch);
    }
    grads.d_sh[id] += dc_raw * basis.transpose();
    Vec3 d_dir = Vec3::Zero();
    for (int ch = 0; ch < 3; ++ch) {
      d_dir += dc_raw(ch) * kSh1 * Vec3(-g.sh(ch, 3), -g.sh(ch, 1), g.sh(ch, 2));
    }
    // dir = (c - mu)/|c - mu|: d dir/d mu = -(I - dir dir^T)/|c - mu|.
    grads.d_mean[id] -= (d_dir - dir * dir.dot(d_dir)) / dist;

    // Normal: n_cam = W * sign * R e_k.
    const Vec3 dn_world = w_rot.transpose() * acc.d_normal_cam;
    const int axis = smallest_scale_axis(s);
    const double sign =
        rot.col(axis).dot(cam_center - g.mean) < 0.0 ? -1.0 : 1.0;
    grads.d_rotation[id] +=
        sign * skew(Vec3::Unit(axis)) * (rot.transpose() * dn_world);

    // Projection: mu' = proj(t), cov2 = J (W Sigma W^T) J^T + floor.
    const Vec3 t = view.camera_from_world * g.mean;
    const Mat23 j = projection_jacobian(view.camera, t);
    Vec3 d_t = j.transpose() * acc.d_mean2d;

    const Mat2 u = acc.d_cov2d;
    const Mat3 cov_cam = w_rot * g.covariance() * w_rot.transpose();
    const Mat23 d_j = 2.0 * u * j * cov_cam;
    const double iz = 1.0 / t.z();
    const double iz2 = iz * iz;
    const Camera& cam = view.camera;
    d_t.x() += d_j(0, 2) * (-cam.fx * iz2);
    d_t.y() += d_j(1, 2) * (-cam.fy * iz2);
    d_t.z() += d_j(0, 0) * (-cam.fx * iz2) + d_j(1, 1) * (-cam.fy * iz2) +
               d_j(0, 2) * (2.0 * cam.fx * t.x() * iz2 * iz) +
               d_j(1, 2) * (2.0 * cam.fy * t.y() * iz2 * iz);
    grads.d_mean[id] += w_rot.transpose() * d_t;

    // Sigma' chain down to log-scales and the rotation tangent.
    const Mat3 d_cov_world =
        w_rot.transpose() * (j.transpose() * u * j) * w_rot;
    const Mat3 a = rot.transpose() * d_cov_world * rot;
    for (int k = 0; k < 3; ++k) {
      grads.d_log_scale[id](k) += 2.0 * s(k) * s(k) * a(k, k);
      const Mat3 gen = skew(Vec3::Unit(k));
      const Mat3 d2 = s.cwiseProduct(s).asDiagonal();
      const Mat3 b = gen * d2 - d2 * gen;
      grads.d_rotation[id](k) += (a.array() * b.array()).sum();
    }
  }
  return grads;
}

void transform_scene(std::vector<GaussianPrimitive>& scene, const SE3Pose& g) {
  const Mat3 rot = g.rotation.matrix();
  for (auto& p : scene) {
    p.mean = g * p.mean;
    p.orientation = g.rotation * p.orientation;
    for (int ch = 0; ch < 3; ++ch) {
      // Degree-1 band as the world-space vector v with linear part v . dir.
      const Vec3 v = kSh1 * Vec3(-p.sh(ch, 3), -p.sh(ch, 1), p.sh(ch, 2));
      const Vec3 w = rot * v;
      p.sh(ch, 1) = -w.y() / kSh1;
      p.sh(ch, 2) = w.z() / kSh1;
      p.sh(ch, 3) = -w.x() / kSh1;
    }
  }
}

}  // namespace msplat
