#include "msplat/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace msplat {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWindow>& window_taps() {
  static const std::array<double, kWindow> taps = [] {
    std::array<double, kWindow> t{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      const double d = i - (kWindow - 1) / 2.0;
      t[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
      sum += t[i];
    }
    for (double& v : t) v /= sum;
    return t;
  }();
  return taps;
}

/// Separable Gaussian window with zero padding; symmetric, so it equals its
/// own adjoint, which the SSIM gradient relies on.
Image window_filter(const Image& in) {
  const auto& taps = window_taps();
  const int h = in.height(), w = in.width(), ch = in.channels();
  const int r = kWindow / 2;
  Image tmp(h, w, ch), out(h, w, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k) {
          const int xx = x + k;
          if (xx < 0 || xx >= w) continue;
          acc += taps[k + r] * in.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k) {
          const int yy = y + k;
          if (yy < 0 || yy >= h) continue;
          acc += taps[k + r] * tmp.at(yy, x, c);
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

Image elementwise_product(const Image& a, const Image& b) {
  Image out(a.height(), a.width(), a.channels());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  }
}

struct SsimMaps {
  Image mu_x, mu_y, xx, yy, xy;  // window-filtered statistics
};

SsimMaps ssim_maps(const Image& x, const Image& y) {
  return SsimMaps{window_filter(x), window_filter(y),
                  window_filter(elementwise_product(x, x)),
                  window_filter(elementwise_product(y, y)),
                  window_filter(elementwise_product(x, y))};
}

double ssim_mean(const SsimMaps& m, Image* map_out) {
  double total = 0.0;
  for (size_t i = 0; i < m.mu_x.size(); ++i) {
    const double mx = m.mu_x.data()[i];
    const double my = m.mu_y.data()[i];
    const double sx = m.xx.data()[i] - mx * mx;
    const double sy = m.yy.data()[i] - my * my;
    const double sxy = m.xy.data()[i] - mx * my;
    const double a1 = 2.0 * mx * my + kC1;
    const double a2 = 2.0 * sxy + kC2;
    const double b1 = mx * mx + my * my + kC1;
    const double b2 = sx + sy + kC2;
    const double s = (a1 * a2) / (b1 * b2);
    if (map_out) map_out->data()[i] = s;
    total += s;
  }
  return total / static_cast<double>(m.mu_x.size());
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  return ssim_mean(ssim_maps(a, b), nullptr);
}

PhotometricResult photometric_loss(const Image& rendered, const Image& target,
                                   double lambda_ssim) {
  require_same_shape(rendered, target, "photometric_loss");
  if (!(lambda_ssim >= 0.0 && lambda_ssim <= 1.0)) {
    throw std::invalid_argument("photometric_loss: lambda_ssim must be in [0,1]");
  }
  const size_t n = rendered.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  PhotometricResult result;
  result.d_rendered = Image(rendered.height(), rendered.width(), rendered.channels());

  double l1 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double diff = rendered.data()[i] - target.data()[i];
    l1 += std::abs(diff);
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    result.d_rendered.data()[i] = (1.0 - lambda_ssim) * inv_n * sign;
  }
  l1 *= inv_n;
  if (lambda_ssim == 0.0) {
    result.loss = l1;
    return result;
  }

  const SsimMaps m = ssim_maps(rendered, target);
  const double mean_ssim = ssim_mean(m, nullptr);
  result.loss = (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - mean_ssim);

  // d(1 - mean S)/dS = -1/n per entry; chain through the five filtered maps,
  // each of which sees the rendered image x through mu_x = G x, xx = G(x*x),
  // xy = G(x*y): dL/dx = G p_mu + 2x * (G p_xx) + y * (G p_xy).
  const double d_s = -lambda_ssim * inv_n;
  Image p_mu(rendered.height(), rendered.width(), rendered.channels());
  Image p_xx(rendered.height(), rendered.width(), rendered.channels());
  Image p_xy(rendered.height(), rendered.width(), rendered.channels());
  for (size_t i = 0; i < n; ++i) {
    const double mx = m.mu_x.data()[i];
    const double my = m.mu_y.data()[i];
    const double sx = m.xx.data()[i] - mx * mx;
    const double sy = m.yy.data()[i] - my * my;
    const double sxy = m.xy.data()[i] - mx * my;
    const double a1 = 2.0 * mx * my + kC1;
    const double a2 = 2.0 * sxy + kC2;
    const double b1 = mx * mx + my * my + kC1;
    const double b2 = sx + sy + kC2;
    const double inv_d = 1.0 / (b1 * b2);
    const double s = a1 * a2 * inv_d;
    // Partials w.r.t. the filtered statistics (sigma terms expanded in
    // mu_x, xx, xy so the maps are independent variables).
    const double ds_dmu_x =
        2.0 * my * (a2 - a1) * inv_d - 2.0 * mx * s * (1.0 / b1 - 1.0 / b2);
    const double ds_dxx = -s / b2;
    const double ds_dxy = 2.0 * a1 * inv_d;
    p_mu.data()[i] = d_s * ds_dmu_x;
    p_xx.data()[i] = d_s * ds_dxx;
    p_xy.data()[i] = d_s * ds_dxy;
  }
  const Image g_mu = window_filter(p_mu);
  const Image g_xx = window_filter(p_xx);
  const Image g_xy = window_filter(p_xy);
  for (size_t i = 0; i < n; ++i) {
    result.d_rendered.data()[i] += g_mu.data()[i] +
                                   2.0 * rendered.data()[i] * g_xx.data()[i] +
                                   target.data()[i] * g_xy.data()[i];
  }
  return result;
}

ScaleLossResult scale_loss(const std::vector<GaussianPrimitive>& scene) {
  ScaleLossResult result;
  result.d_log_scale.assign(scene.size(), Vec3::Zero());
  for (size_t i = 0; i < scene.size(); ++i) {
    const Vec3 s = scene[i].scales();
    int k = 0;
    if (s.y() < s.x()) k = 1;
    if (s.z() < s(k)) k = 2;  // lowest index wins ties
    result.loss += s(k);
    result.d_log_scale[i](k) = s(k);  // d exp(l) / d l = s
  }
  return result;
}

double effective_rank(const Vec3& scales) {
  if (!(scales.x() > 0.0 && scales.y() > 0.0 && scales.z() > 0.0)) {
    throw std::invalid_argument("effective_rank: scales must be positive");
  }
  const Vec3 sq = scales.cwiseProduct(scales);
  const Vec3 w = sq / sq.sum();
  double entropy = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (w(i) > 0.0) entropy -= w(i) * std::log(w(i));
  }
  return std::exp(entropy);
}

ErankLossResult erank_loss(const std::vector<GaussianPrimitive>& scene,
                           double lambda_en, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("erank_loss: epsilon must be positive");
  }
  ErankLossResult result;
  result.d_log_scale.assign(scene.size(), Vec3::Zero());
  for (size_t i = 0; i < scene.size(); ++i) {
    const Vec3 s = scene[i].scales();
    const Vec3 sq = s.cwiseProduct(s);
    const Vec3 w = sq / sq.sum();
    double entropy = 0.0;
    for (int k = 0; k < 3; ++k) {
      if (w(k) > 0.0) entropy -= w(k) * std::log(w(k));
    }
    const double en = std::exp(entropy);
    const double arg = en - 1.0 + epsilon;
    if (arg <= 0.0) throw std::domain_error("erank_loss: nonpositive log argument");
    const double term = -std::log(arg);
    if (term <= 0.0) continue;  // clamped: flat-enough shape contributes nothing
    result.loss += lambda_en * term;
    // d term / d log s_j = (2 En w_j (log w_j + entropy)) / (En - 1 + eps).
    for (int j = 0; j < 3; ++j) {
      if (w(j) <= 0.0) continue;
      const double d_en = -2.0 * en * w(j) * (std::log(w(j)) + entropy);
      result.d_log_scale[i](j) = lambda_en * (-d_en / arg);
    }
  }
  return result;
}

NormalLossResult normal_loss(const Image& rendered_normals,
                             const SupervisionBundle& bundle,
                             NormalWeighting weighting) {
  require_same_shape(rendered_normals, bundle.normal_map, "normal_loss");
  if (bundle.grad_weight.height() != rendered_normals.height() ||
      bundle.grad_weight.width() != rendered_normals.width() ||
      bundle.grad_weight.channels() != 1) {
    throw std::invalid_argument("normal_loss: gradient map dimension mismatch");
  }
  const int h = rendered_normals.height();
  const int w = rendered_normals.width();
  const double inv_n = 1.0 / (static_cast<double>(h) * w);

  NormalLossResult result;
  result.d_normal = Image(h, w, rendered_normals.channels());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g = bundle.grad_weight.at(y, x, 0);
      const double weight = weighting == NormalWeighting::kGradPow5
                                ? g * g * g * g * g
                                : 1.0 - g;
      for (int c = 0; c < rendered_normals.channels(); ++c) {
        const double diff = bundle.normal_map.at(y, x, c) - rendered_normals.at(y, x, c);
        result.loss += inv_n * weight * std::abs(diff);
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        result.d_normal.at(y, x, c) = -inv_n * weight * sign;
      }
    }
  }
  return result;
}

SmoothnessLossResult smoothness_loss(const Image& rendered_normals) {
  const int h = rendered_normals.height();
  const int w = rendered_normals.width();
  if (h * w <= 1) {
    throw std::invalid_argument("smoothness_loss: needs more than one pixel");
  }
  const double inv_n = 1.0 / (static_cast<double>(h) * w);
  SmoothnessLossResult result;
  result.d_normal = Image(h, w, rendered_normals.channels());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < rendered_normals.channels(); ++c) {
        const double v = rendered_normals.at(y, x, c);
        if (y + 1 < h) {
          const double diff = rendered_normals.at(y + 1, x, c) - v;
          result.loss += inv_n * std::abs(diff);
          const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          result.d_normal.at(y + 1, x, c) += inv_n * sign;
          result.d_normal.at(y, x, c) -= inv_n * sign;
        }
        if (x + 1 < w) {
          const double diff = rendered_normals.at(y, x + 1, c) - v;
          result.loss += inv_n * std::abs(diff);
          const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          result.d_normal.at(y, x + 1, c) += inv_n * sign;
          result.d_normal.at(y, x, c) -= inv_n * sign;
        }
      }
    }
  }
  return result;
}

Image normalized_gradient_magnitude(const Image& rgb) {
  const int h = rgb.height();
  const int w = rgb.width();
  Image gray(h, w, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (rgb.channels() >= 3) {
        gray.at(y, x, 0) = 0.299 * rgb.at(y, x, 0) + 0.587 * rgb.at(y, x, 1) +
                           0.114 * rgb.at(y, x, 2);
      } else {
        gray.at(y, x, 0) = rgb.at(y, x, 0);
      }
    }
  }
  auto sample = [&](int y, int x) {
    return gray.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1), 0);
  };
  Image mag(h, w, 1);
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Paired differences cancel exactly on constant images.
      const double gx = (sample(y - 1, x + 1) - sample(y - 1, x - 1)) +
                        2.0 * (sample(y, x + 1) - sample(y, x - 1)) +
                        (sample(y + 1, x + 1) - sample(y + 1, x - 1));
      const double gy = (sample(y + 1, x - 1) - sample(y - 1, x - 1)) +
                        2.0 * (sample(y + 1, x) - sample(y - 1, x)) +
                        (sample(y + 1, x + 1) - sample(y - 1, x + 1));
      const double m = std::sqrt(gx * gx + gy * gy);
      mag.at(y, x, 0) = m;
      peak = std::max(peak, m);
    }
  }
  if (peak > 0.0) {
    for (size_t i = 0; i < mag.size(); ++i) mag.data()[i] /= peak;
  }
  return mag;
}

SupervisionBundle make_supervision(const Image& target, const Image& normal_map) {
  if (target.channels() != 3 || normal_map.channels() != 3 ||
      target.height() != normal_map.height() ||
      target.width() != normal_map.width()) {
    throw std::invalid_argument("make_supervision: dimension mismatch");
  }
  return SupervisionBundle{target, normal_map, normalized_gradient_magnitude(target)};
}

TotalLossResult total_loss(const RenderBuffers& buffers,
                           const SupervisionBundle& bundle,
                           const std::vector<GaussianPrimitive>& scene,
                           const LossWeights& weights) {
  TotalLossResult result;
  result.d_log_scale.assign(scene.size(), Vec3::Zero());

  PhotometricResult photo =
      photometric_loss(buffers.color, bundle.target, weights.lambda_ssim);
  result.breakdown.img = photo.loss;
  result.d_color = std::move(photo.d_rendered);

  if (weights.use_shape) {
    ErankLossResult shape =
        erank_loss(scene, weights.lambda_en, weights.epsilon_erank);
    result.breakdown.erank = shape.loss;
    for (size_t i = 0; i < scene.size(); ++i) {
      result.d_log_scale[i] += shape.d_log_scale[i];
    }
  }

  if (weights.use_normal) {
    ScaleLossResult min_scale = scale_loss(scene);
    result.breakdown.scale = min_scale.loss;
    for (size_t i = 0; i < scene.size(); ++i) {
      result.d_log_scale[i] += min_scale.d_log_scale[i];
    }

    NormalLossResult consistency =
        normal_loss(buffers.normal, bundle, weights.normal_weighting);
    SmoothnessLossResult smooth = smoothness_loss(buffers.normal);
    result.breakdown.normal = consistency.loss;
    result.breakdown.smooth = smooth.loss;
    result.d_normal = Image(buffers.normal.height(), buffers.normal.width(), 3);
    for (size_t i = 0; i < result.d_normal.size(); ++i) {
      result.d_normal.data()[i] = consistency.d_normal.data()[i] +
                                  weights.lambda_smooth * smooth.d_normal.data()[i];
    }
  }

  result.breakdown.total = result.breakdown.img + result.breakdown.erank +
                           result.breakdown.scale + result.breakdown.normal +
                           weights.lambda_smooth * result.breakdown.smooth;
  return result;
}

}  // namespace msplat
