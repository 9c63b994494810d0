#pragma once

#include <vector>

#include "msplat/image.hpp"
#include "msplat/splat.hpp"

namespace msplat {

/// Pixel weighting applied to the normal-consistency loss.
enum class NormalWeighting {
  kGradPow5,      // weight = g^5: up-weights strong-gradient pixels
  kOneMinusGrad,  // weight = 1 - g: down-weights strong-gradient pixels
};

struct LossWeights {
  double lambda_ssim = 0.2;
  double lambda_en = 0.01;
  double lambda_smooth = 0.5;
  double epsilon_erank = 1e-6;
  NormalWeighting normal_weighting = NormalWeighting::kGradPow5;
  bool use_shape = true;   // entropy-based shape term
  bool use_normal = true;  // min-scale + normal-consistency + smoothness group
};

/// Per-term values; erank includes its lambda_en factor, smooth is stored
/// unweighted. total = img + erank + scale + normal + lambda_smooth * smooth.
struct LossBreakdown {
  double img = 0.0;
  double scale = 0.0;
  double erank = 0.0;
  double normal = 0.0;
  double smooth = 0.0;
  double total = 0.0;
};

/// Per-view supervision: RGB target, camera-frame unit normal map, and the
/// normalized image-gradient magnitude used to weight the normal loss.
struct SupervisionBundle {
  Image target;       // H x W x 3 in [0,1]
  Image normal_map;   // H x W x 3, unit-norm per pixel
  Image grad_weight;  // H x W x 1 in [0,1]
};

/// Sobel magnitude of the Rec.601 luminance, max-normalized to [0,1]
/// (all-zero when the image is constant). Replicated borders.
Image normalized_gradient_magnitude(const Image& rgb);

/// Builds a bundle, deriving grad_weight from the target image.
SupervisionBundle make_supervision(const Image& target, const Image& normal_map);

/// Mean single-scale SSIM over pixels and channels: 11x11 Gaussian window,
/// sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, zero padding at the borders (the
/// window operator is then self-adjoint, which the gradient uses).
double ssim(const Image& a, const Image& b);

struct PhotometricResult {
  double loss = 0.0;
  Image d_rendered;
};

/// (1 - lambda_ssim) * mean-L1 + lambda_ssim * (1 - SSIM), with the gradient
/// w.r.t. the rendered image. Throws std::invalid_argument on dimension
/// mismatch or lambda_ssim outside [0,1].
PhotometricResult photometric_loss(const Image& rendered, const Image& target,
                                   double lambda_ssim);

struct ScaleLossResult {
  double loss = 0.0;
  std::vector<Vec3> d_log_scale;
};

/// Sum over primitives of the smallest effective scale; the subgradient lands
/// on the minimum axis, lowest index on ties.
ScaleLossResult scale_loss(const std::vector<GaussianPrimitive>& scene);

/// Shape entropy of a scale triple: weights w_i = s_i^2 / sum s_j^2,
/// En = exp(-sum w_i log w_i) in [1, 3], with 0 log 0 := 0.
/// Throws std::invalid_argument unless all scales are positive.
double effective_rank(const Vec3& scales);

struct ErankLossResult {
  double loss = 0.0;
  std::vector<Vec3> d_log_scale;
};

/// lambda_en * sum_k max(-log(En_k - 1 + epsilon), 0): pushes needle-like
/// primitives (En near 1) toward disks; zero (clamped) once En >= 2 - epsilon.
ErankLossResult erank_loss(const std::vector<GaussianPrimitive>& scene,
                           double lambda_en, double epsilon);

struct NormalLossResult {
  double loss = 0.0;
  Image d_normal;
};

/// Mean over pixels of weight(grad) * ||N_target - N_rendered||_1 summed over
/// channels. The rendered map is compared as-is (no renormalization).
NormalLossResult normal_loss(const Image& rendered_normals,
                             const SupervisionBundle& bundle,
                             NormalWeighting weighting);

struct SmoothnessLossResult {
  double loss = 0.0;
  Image d_normal;
};

/// Mean forward-difference total variation of the normal map: per pixel the
/// L1 difference to the next row and next column (borders omitted), divided
/// by the pixel count. Throws std::invalid_argument for a 1-pixel map.
SmoothnessLossResult smoothness_loss(const Image& rendered_normals);

struct TotalLossResult {
  LossBreakdown breakdown;
  Image d_color;      // upstream gradient for render_backward
  Image d_normal;     // upstream gradient for render_backward
  std::vector<Vec3> d_log_scale;  // direct per-primitive term, renderer-free
};

/// Composes the training objective from rendered buffers and supervision:
/// total = img + shape + (scale + normal + lambda_smooth * smooth), with the
/// latter two groups gated by use_shape / use_normal. Image-space gradients
/// feed render_backward; d_log_scale adds on top of its d_log_scale output.
TotalLossResult total_loss(const RenderBuffers& buffers,
                           const SupervisionBundle& bundle,
                           const std::vector<GaussianPrimitive>& scene,
                           const LossWeights& weights);

}  // namespace msplat
