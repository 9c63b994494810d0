#pragma once

#include <msplat/losses.hpp>
#include <msplat/splat.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace msplat {

struct TrainConfig {
  int iterations = 3000;
  double lr_mean = 1.6e-4;
  double lr_log_scale = 5e-3;
  double lr_rotation = 1e-3;
  double lr_opacity = 5e-2;
  double lr_color = 2.5e-3;
  LossWeights loss_weights;
  std::uint32_t seed = 0;
  int snapshot_cadence = 0;  // iterations between scene snapshots; 0 disables
  std::string snapshot_dir;
  int eval_stride = 8;  // every Nth view is held out for evaluation

  /// Throws std::invalid_argument on nonpositive iterations/stride or
  /// negative learning rates. Zero learning rates are legal (frozen group).
  void validate() const;
};

/// One posed view with its supervision targets.
struct TrainView {
  ViewCamera view;
  SupervisionBundle supervision;
};

struct ViewMetrics {
  int view_index = 0;
  bool held_out = false;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricsReport {
  std::vector<ViewMetrics> view_metrics;   // final metrics, one row per view
  std::vector<LossBreakdown> loss_history; // mean train-view loss per iteration
  double wall_clock_seconds = 0.0;
};

struct TrainResult {
  std::vector<GaussianPrimitive> scene;
  MetricsReport report;
};

/// One primitive per point: isotropic scale at the mean distance to the
/// point's 3 nearest neighbors, identity orientation, 0.1 effective opacity,
/// and the color folded into the degree-0 SH coefficient.
std::vector<GaussianPrimitive> init_scene(const std::vector<Vec3>& points,
                                          const std::vector<Vec3>& colors,
                                          const TrainConfig& config);

/// Full-batch adaptive-moment optimization of all Gaussian parameters against
/// the training views (those not held out by eval_stride). Deterministic for
/// a fixed seed, view order, and thread-count contract. Throws
/// std::runtime_error naming the offending term if any loss turns non-finite.
TrainResult train(std::vector<GaussianPrimitive> scene,
                  const std::vector<TrainView>& views,
                  const TrainConfig& config);

/// -10*log10(MSE) over all pixels and channels; +infinity for identical
/// images. Throws std::invalid_argument on shape mismatch.
double psnr(const Image& a, const Image& b);

}  // namespace msplat
