#include "msplat/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>

#include "msplat/io/ply.hpp"
#include "msplat/lie.hpp"

namespace msplat {
namespace {

// Packed per-primitive parameter layout for the moment estimates:
// [mean 0..2 | log_scale 3..5 | rotation tangent 6..8 | opacity 9 | sh 10..21]
constexpr int kParamsPerPrimitive = 22;
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double group_lr(const TrainConfig& config, int offset) {
  if (offset < 3) return config.lr_mean;
  if (offset < 6) return config.lr_log_scale;
  if (offset < 9) return config.lr_rotation;
  if (offset < 10) return config.lr_opacity;
  return config.lr_color;
}

void pack_gradient(const SceneGradients& grads, std::vector<double>& out) {
  const size_t n = grads.d_mean.size();
  out.assign(n * kParamsPerPrimitive, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double* p = out.data() + i * kParamsPerPrimitive;
    for (int k = 0; k < 3; ++k) p[k] = grads.d_mean[i](k);
    for (int k = 0; k < 3; ++k) p[3 + k] = grads.d_log_scale[i](k);
    for (int k = 0; k < 3; ++k) p[6 + k] = grads.d_rotation[i](k);
    p[9] = grads.d_opacity_logit[i];
    for (int ch = 0; ch < 3; ++ch) {
      for (int k = 0; k < 4; ++k) p[10 + ch * 4 + k] = grads.d_sh[i](ch, k);
    }
  }
}

void apply_step(std::vector<GaussianPrimitive>& scene,
                const std::vector<double>& step) {
  for (size_t i = 0; i < scene.size(); ++i) {
    const double* p = step.data() + i * kParamsPerPrimitive;
    GaussianPrimitive& g = scene[i];
    for (int k = 0; k < 3; ++k) g.mean(k) -= p[k];
    for (int k = 0; k < 3; ++k) g.log_scale(k) -= p[3 + k];
    const Vec3 tangent(p[6], p[7], p[8]);
    g.orientation = g.orientation * so3_exp(-tangent);  // renormalizes
    g.opacity_logit -= p[9];
    for (int ch = 0; ch < 3; ++ch) {
      for (int k = 0; k < 4; ++k) g.sh(ch, k) -= p[10 + ch * 4 + k];
    }
  }
}

void check_finite(const LossBreakdown& b, int iteration) {
  const struct {
    const char* name;
    double value;
  } terms[] = {{"img", b.img},       {"erank", b.erank}, {"scale", b.scale},
               {"normal", b.normal}, {"smooth", b.smooth}, {"total", b.total}};
  for (const auto& t : terms) {
    if (!std::isfinite(t.value)) {
      throw std::runtime_error("non-finite " + std::string(t.name) +
                               " loss at iteration " +
                               std::to_string(iteration));
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations <= 0) throw std::invalid_argument("iterations must be positive");
  if (eval_stride <= 0) throw std::invalid_argument("eval_stride must be positive");
  for (const double lr :
       {lr_mean, lr_log_scale, lr_rotation, lr_opacity, lr_color}) {
    if (lr < 0.0 || !std::isfinite(lr)) {
      throw std::invalid_argument("learning rates must be nonnegative");
    }
  }
  if (snapshot_cadence < 0) {
    throw std::invalid_argument("snapshot_cadence must be nonnegative");
  }
}

std::vector<GaussianPrimitive> init_scene(const std::vector<Vec3>& points,
                                          const std::vector<Vec3>& colors,
                                          const TrainConfig& config) {
  (void)config;
  if (points.empty()) throw std::invalid_argument("init_scene: no points");
  if (colors.size() != points.size()) {
    throw std::invalid_argument("init_scene: point/color count mismatch");
  }
  const size_t n = points.size();
  std::vector<GaussianPrimitive> scene(n);
  std::vector<double> dists;
  for (size_t i = 0; i < n; ++i) {
    dists.clear();
    for (size_t j = 0; j < n; ++j) {
      if (j != i) dists.push_back((points[j] - points[i]).norm());
    }
    double scale = 0.1;  // isolated-point fallback
    if (!dists.empty()) {
      const size_t k = std::min<size_t>(3, dists.size());
      std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
      double sum = 0.0;
      for (size_t m = 0; m < k; ++m) sum += dists[m];
      scale = sum / static_cast<double>(k);
    }
    GaussianPrimitive& g = scene[i];
    g.mean = points[i];
    g.log_scale = Vec3::Constant(std::log(scale));
    g.orientation = Rotation();
    g.opacity_logit = std::log(0.1 / 0.9);
    g.sh.setZero();
    for (int ch = 0; ch < 3; ++ch) g.sh(ch, 0) = (colors[i](ch) - 0.5) / kSh0;
  }
  return scene;
}

TrainResult train(std::vector<GaussianPrimitive> scene,
                  const std::vector<TrainView>& views,
                  const TrainConfig& config) {
  config.validate();
  if (views.empty()) throw std::invalid_argument("train: no views");

  std::vector<int> train_indices;
  for (size_t i = 0; i < views.size(); ++i) {
    if (static_cast<int>(i) % config.eval_stride != 0) {
      train_indices.push_back(static_cast<int>(i));
    }
  }
  if (train_indices.empty()) {
    // Too few views for a held-out split; train on everything.
    for (size_t i = 0; i < views.size(); ++i) {
      train_indices.push_back(static_cast<int>(i));
    }
  }

  const auto start = std::chrono::steady_clock::now();
  const size_t n_params = scene.size() * kParamsPerPrimitive;
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0);
  std::vector<double> grad, step(n_params, 0.0), packed;

  TrainResult result;
  result.report.loss_history.reserve(config.iterations);
  const double inv_views = 1.0 / static_cast<double>(train_indices.size());

  for (int it = 0; it < config.iterations; ++it) {
    LossBreakdown mean_loss;
    grad.assign(n_params, 0.0);
    for (const int vi : train_indices) {
      const TrainView& tv = views[vi];
      const RenderBuffers buf = render(scene, tv.view);
      const TotalLossResult loss =
          total_loss(buf, tv.supervision, scene, config.loss_weights);
      check_finite(loss.breakdown, it);
      mean_loss.img += inv_views * loss.breakdown.img;
      mean_loss.erank += inv_views * loss.breakdown.erank;
      mean_loss.scale += inv_views * loss.breakdown.scale;
      mean_loss.normal += inv_views * loss.breakdown.normal;
      mean_loss.smooth += inv_views * loss.breakdown.smooth;
      mean_loss.total += inv_views * loss.breakdown.total;

      SceneGradients grads = render_backward(scene, tv.view, buf, loss.d_color,
                                             loss.d_normal, Image());
      for (size_t i = 0; i < scene.size(); ++i) {
        grads.d_log_scale[i] += loss.d_log_scale[i];
      }
      pack_gradient(grads, packed);
      for (size_t i = 0; i < n_params; ++i) grad[i] += inv_views * packed[i];
    }
    result.report.loss_history.push_back(mean_loss);

    const double bias1 = 1.0 - std::pow(kBeta1, it + 1);
    const double bias2 = 1.0 - std::pow(kBeta2, it + 1);
    for (size_t i = 0; i < n_params; ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      const double lr = group_lr(
          config, static_cast<int>(i % kParamsPerPrimitive));
      step[i] = lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + kAdamEps);
    }
    apply_step(scene, step);

    if (config.snapshot_cadence > 0 && !config.snapshot_dir.empty() &&
        (it + 1) % config.snapshot_cadence == 0) {
      std::filesystem::create_directories(config.snapshot_dir);
      char name[32];
      std::snprintf(name, sizeof(name), "snapshot_%06d.ply", it + 1);
      save_gaussian_ply(
          (std::filesystem::path(config.snapshot_dir) / name).string(), scene);
    }
  }

  for (size_t i = 0; i < views.size(); ++i) {
    const RenderBuffers buf = render(scene, views[i].view);
    ViewMetrics vm;
    vm.view_index = static_cast<int>(i);
    vm.held_out = std::find(train_indices.begin(), train_indices.end(),
                            static_cast<int>(i)) == train_indices.end();
    vm.psnr = psnr(buf.color, views[i].supervision.target);
    vm.ssim = ssim(buf.color, views[i].supervision.target);
    result.report.view_metrics.push_back(vm);
  }
  result.report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  result.scene = std::move(scene);
  return result;
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

}  // namespace msplat
