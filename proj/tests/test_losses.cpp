#include <doctest.h>

#include <msplat/losses.hpp>
#include <msplat/splat.hpp>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

using namespace msplat;

namespace {

Rotation random_rotation(std::mt19937& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Rotation(
      Eigen::Quaterniond(n(gen), n(gen), n(gen), n(gen)).normalized());
}

Image random_image(std::mt19937& gen, int h, int w, int ch, double lo = 0.0,
                   double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(h, w, ch);
  for (size_t i = 0; i < img.size(); ++i) img.data()[i] = u(gen);
  return img;
}

/// Unit-norm per-pixel normal map.
Image random_normal_map(std::mt19937& gen, int h, int w) {
  std::normal_distribution<double> n(0.0, 1.0);
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vec3 v = Vec3(n(gen), n(gen), n(gen)).normalized();
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = v(c);
    }
  }
  return img;
}

GaussianPrimitive primitive_with_scales(const Vec3& scales) {
  GaussianPrimitive g;
  g.log_scale = scales.array().log();
  return g;
}

/// FD gate from the module contract: 1e-4 absolute or 1e-3 relative,
/// whichever is larger.
void check_fd(double analytic, double fd, const std::string& label) {
  const double tol = std::max(1e-4, 1e-3 * std::max(std::abs(analytic), std::abs(fd)));
  CHECK_MESSAGE(std::abs(analytic - fd) <= tol,
                label, ": analytic ", analytic, " vs fd ", fd);
}

}  // namespace

TEST_CASE("photometric loss vanishes for identical images") {
  std::mt19937 gen(3);
  const Image img = random_image(gen, 10, 7, 3);
  const PhotometricResult r = photometric_loss(img, img, 0.2);
  CHECK(r.loss == 0.0);
  CHECK(ssim(img, img) == 1.0);
}

TEST_CASE("pure L1 photometric loss of a uniform +0.1 offset is 0.1") {
  std::mt19937 gen(5);
  const Image target = random_image(gen, 8, 8, 3, 0.0, 0.85);
  Image rendered = target;
  for (size_t i = 0; i < rendered.size(); ++i) rendered.data()[i] += 0.1;
  const PhotometricResult r = photometric_loss(rendered, target, 0.0);
  CHECK(r.loss == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("photometric loss rejects mismatched shapes and bad lambda") {
  CHECK_THROWS_AS(photometric_loss(Image(4, 4, 3), Image(4, 5, 3), 0.2),
                  std::invalid_argument);
  CHECK_THROWS_AS(photometric_loss(Image(4, 4, 3), Image(4, 4, 3), 1.5),
                  std::invalid_argument);
}

TEST_CASE("ssim is symmetric, bounded, and below one for distinct images") {
  std::mt19937 gen(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Image a = random_image(gen, 9, 9, 3);
    const Image b = random_image(gen, 9, 9, 3);
    const double s_ab = ssim(a, b);
    const double s_ba = ssim(b, a);
    CHECK(s_ab == doctest::Approx(s_ba).epsilon(1e-12));
    CHECK(s_ab < 1.0);
    CHECK(s_ab > -1.0);
  }
}

TEST_CASE("photometric gradient matches finite differences at 1e-4 relative") {
  std::mt19937 gen(11);
  const Image target = random_image(gen, 8, 8, 3, 0.2, 0.8);
  Image rendered = target;
  std::uniform_real_distribution<double> mag(0.05, 0.15);
  std::bernoulli_distribution coin(0.5);
  for (size_t i = 0; i < rendered.size(); ++i) {
    rendered.data()[i] += coin(gen) ? mag(gen) : -mag(gen);  // away from L1 kinks
  }
  const PhotometricResult r = photometric_loss(rendered, target, 0.2);
  const double h = 1e-6;
  for (size_t i = 0; i < rendered.size(); ++i) {
    Image probe = rendered;
    probe.data()[i] += h;
    const double up = photometric_loss(probe, target, 0.2).loss;
    probe.data()[i] -= 2 * h;
    const double down = photometric_loss(probe, target, 0.2).loss;
    const double fd = (up - down) / (2 * h);
    const double analytic = r.d_rendered.data()[i];
    const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-10});
    CHECK_MESSAGE(std::abs(analytic - fd) <= 1e-4 * denom,
                  "pixel ", i, ": analytic ", analytic, " vs fd ", fd);
  }
}

TEST_CASE("photometric gradient passes the module gate on 50 random instances") {
  std::mt19937 gen(13);
  std::uniform_int_distribution<int> pick(0, 8 * 8 * 3 - 1);
  for (int inst = 0; inst < 50; ++inst) {
    const Image target = random_image(gen, 8, 8, 3, 0.15, 0.85);
    Image rendered = target;
    std::uniform_real_distribution<double> mag(0.03, 0.12);
    std::bernoulli_distribution coin(0.5);
    for (size_t i = 0; i < rendered.size(); ++i) {
      rendered.data()[i] += coin(gen) ? mag(gen) : -mag(gen);
    }
    const PhotometricResult r = photometric_loss(rendered, target, 0.2);
    const double h = 1e-6;
    for (int probe_i = 0; probe_i < 6; ++probe_i) {
      const int i = pick(gen);
      Image probe = rendered;
      probe.data()[i] += h;
      const double up = photometric_loss(probe, target, 0.2).loss;
      probe.data()[i] -= 2 * h;
      const double down = photometric_loss(probe, target, 0.2).loss;
      check_fd(r.d_rendered.data()[i], (up - down) / (2 * h),
               "instance " + std::to_string(inst));
    }
  }
}

TEST_CASE("scale loss takes the smallest effective scale with lowest-index ties") {
  {
    const std::vector<GaussianPrimitive> scene{
        primitive_with_scales(Vec3(1.0, 2.0, 0.5))};
    const ScaleLossResult r = scale_loss(scene);
    CHECK(r.loss == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.d_log_scale[0](0) == 0.0);
    CHECK(r.d_log_scale[0](1) == 0.0);
    CHECK(r.d_log_scale[0](2) == doctest::Approx(0.5).epsilon(1e-12));
  }
  {
    const std::vector<GaussianPrimitive> scene{
        primitive_with_scales(Vec3(1.0, 1.0, 1.0))};
    const ScaleLossResult r = scale_loss(scene);
    CHECK(r.loss == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.d_log_scale[0](0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.d_log_scale[0](1) == 0.0);  // tie resolved to the first axis
    CHECK(r.d_log_scale[0](2) == 0.0);
  }
}

TEST_CASE("scale loss equals the brute-force sum of minima on 100 primitives") {
  std::mt19937 gen(17);
  std::uniform_real_distribution<double> u(-2.0, 1.0);
  std::vector<GaussianPrimitive> scene(100);
  double oracle = 0.0;
  for (auto& g : scene) {
    g.log_scale = Vec3(u(gen), u(gen), u(gen));
    const Vec3 s = g.scales();
    oracle += std::min({s.x(), s.y(), s.z()});
  }
  CHECK(scale_loss(scene).loss == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("effective rank hits its exact and limiting values") {
  for (const double a : {1e-3, 1.0, 50.0}) {
    CHECK(effective_rank(Vec3(a, a, a)) == doctest::Approx(3.0).epsilon(1e-12));
  }
  CHECK(effective_rank(Vec3(1.0, 1.0, 1e-9)) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(effective_rank(Vec3(1.0, 1e-6, 1e-6)) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(effective_rank(Vec3(1.0, 0.0, 1.0)), std::invalid_argument);
  CHECK_THROWS_AS(effective_rank(Vec3(-1.0, 1.0, 1.0)), std::invalid_argument);
}

TEST_CASE("effective rank stays in [1,3] and is invariant to scaling and permutation") {
  std::mt19937 gen(19);
  std::uniform_real_distribution<double> u(-3.0, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec3 s(std::exp(u(gen)), std::exp(u(gen)), std::exp(u(gen)));
    const double en = effective_rank(s);
    CHECK(en >= 1.0 - 1e-12);
    CHECK(en <= 3.0 + 1e-12);
    CHECK(effective_rank(2.5 * s) == doctest::Approx(en).epsilon(1e-12));
    CHECK(effective_rank(Vec3(s.z(), s.x(), s.y())) == doctest::Approx(en).epsilon(1e-12));
  }
}

TEST_CASE("shape loss is zero for disks and spheres and positive for needles") {
  const double lambda = 0.01;
  const double eps = 1e-6;
  {
    const std::vector<GaussianPrimitive> scene{
        primitive_with_scales(Vec3(1.0, 1.0, 1e-9))};  // disk, En = 2
    CHECK(erank_loss(scene, lambda, eps).loss == 0.0);
  }
  {
    const std::vector<GaussianPrimitive> scene{
        primitive_with_scales(Vec3(1.0, 1.0, 1.0))};  // sphere, En = 3
    CHECK(erank_loss(scene, lambda, eps).loss == 0.0);
  }
  {
    const Vec3 s(1.0, 1e-3, 1e-3);
    const std::vector<GaussianPrimitive> scene{primitive_with_scales(s)};
    const ErankLossResult r = erank_loss(scene, lambda, eps);
    CHECK(r.loss > 0.0);
    // Scalar oracle evaluated independently of the implementation.
    const Vec3 sq = s.cwiseProduct(s);
    const Vec3 w = sq / sq.sum();
    double entropy = 0.0;
    for (int i = 0; i < 3; ++i) entropy -= w(i) * std::log(w(i));
    const double oracle = lambda * -std::log(std::exp(entropy) - 1.0 + eps);
    CHECK(r.loss == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("shape loss gradient matches finite differences at 1e-5 on active needles") {
  std::mt19937 gen(23);
  std::uniform_real_distribution<double> minor(std::log(1e-3), std::log(0.2));
  std::uniform_real_distribution<double> major(std::log(0.5), std::log(2.0));
  for (int inst = 0; inst < 50; ++inst) {
    GaussianPrimitive g;
    g.log_scale = Vec3(major(gen), minor(gen), minor(gen));
    const std::vector<GaussianPrimitive> scene{g};
    const ErankLossResult r = erank_loss(scene, 0.01, 1e-6);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      auto probe = scene;
      probe[0].log_scale(k) += h;
      const double up = erank_loss(probe, 0.01, 1e-6).loss;
      probe[0].log_scale(k) -= 2 * h;
      const double down = erank_loss(probe, 0.01, 1e-6).loss;
      const double fd = (up - down) / (2 * h);
      const double analytic = r.d_log_scale[0](k);
      if (r.loss == 0.0) {
        CHECK(analytic == 0.0);
        continue;
      }
      const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-12});
      CHECK_MESSAGE(std::abs(analytic - fd) <= 1e-5 * denom,
                    "instance ", inst, " axis ", k, ": ", analytic, " vs ", fd);
    }
  }
}

TEST_CASE("normal loss vanishes on exact normals and zero-gradient images") {
  std::mt19937 gen(29);
  const Image normals = random_normal_map(gen, 6, 6);
  SupervisionBundle bundle;
  bundle.target = random_image(gen, 6, 6, 3);
  bundle.normal_map = normals;
  bundle.grad_weight = Image(6, 6, 1, 0.7);
  CHECK(normal_loss(normals, bundle, NormalWeighting::kGradPow5).loss == 0.0);

  const Image other = random_normal_map(gen, 6, 6);
  bundle.grad_weight = Image(6, 6, 1, 0.0);  // weight g^5 annihilates
  CHECK(normal_loss(other, bundle, NormalWeighting::kGradPow5).loss == 0.0);
  bundle.grad_weight = Image(6, 6, 1, 1.0);  // weight 1 - g annihilates
  CHECK(normal_loss(other, bundle, NormalWeighting::kOneMinusGrad).loss == 0.0);
}

TEST_CASE("normal loss with uniform unit weight is the mean per-pixel L1") {
  std::mt19937 gen(31);
  const Image rendered = random_normal_map(gen, 7, 5);
  SupervisionBundle bundle;
  bundle.target = random_image(gen, 7, 5, 3);
  bundle.normal_map = random_normal_map(gen, 7, 5);
  bundle.grad_weight = Image(7, 5, 1, 1.0);

  double oracle = 0.0;
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 5; ++x) {
      for (int c = 0; c < 3; ++c) {
        oracle += std::abs(bundle.normal_map.at(y, x, c) - rendered.at(y, x, c));
      }
    }
  }
  oracle /= 35.0;
  const NormalLossResult r = normal_loss(rendered, bundle, NormalWeighting::kGradPow5);
  CHECK(r.loss == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(r.loss >= 0.0);
}

TEST_CASE("normal loss gradient matches finite differences for both weightings") {
  std::mt19937 gen(37);
  for (const auto weighting :
       {NormalWeighting::kGradPow5, NormalWeighting::kOneMinusGrad}) {
    for (int inst = 0; inst < 25; ++inst) {
      const Image rendered = random_normal_map(gen, 5, 5);
      SupervisionBundle bundle;
      bundle.target = random_image(gen, 5, 5, 3);
      bundle.normal_map = random_normal_map(gen, 5, 5);
      bundle.grad_weight = random_image(gen, 5, 5, 1, 0.1, 0.9);

      const NormalLossResult r = normal_loss(rendered, bundle, weighting);
      const double h = 1e-6;
      std::uniform_int_distribution<int> pick(0, 5 * 5 * 3 - 1);
      for (int probe_i = 0; probe_i < 6; ++probe_i) {
        const int i = pick(gen);
        Image probe = rendered;
        probe.data()[i] += h;
        const double up = normal_loss(probe, bundle, weighting).loss;
        probe.data()[i] -= 2 * h;
        const double down = normal_loss(probe, bundle, weighting).loss;
        check_fd(r.d_normal.data()[i], (up - down) / (2 * h),
                 "normal fd instance " + std::to_string(inst));
      }
    }
  }
}

TEST_CASE("smoothness loss of a constant map is zero and a 2x1 step costs 0.25") {
  Image constant(4, 6, 3);
  for (size_t i = 0; i < constant.size(); ++i) constant.data()[i] = 0.42;
  CHECK(smoothness_loss(constant).loss == 0.0);

  Image step(2, 1, 3);
  step.at(0, 0, 0) = 0.1;
  step.at(1, 0, 0) = 0.6;  // single forward difference of (0.5, 0, 0)
  CHECK(smoothness_loss(step).loss == doctest::Approx(0.25).epsilon(1e-12));

  CHECK_THROWS_AS(smoothness_loss(Image(1, 1, 3)), std::invalid_argument);
}

TEST_CASE("smoothness loss matches the brute-force neighbor sum") {
  std::mt19937 gen(41);
  const Image map = random_normal_map(gen, 6, 9);
  double oracle = 0.0;
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 9; ++x) {
      for (int c = 0; c < 3; ++c) {
        if (y + 1 < 6) oracle += std::abs(map.at(y + 1, x, c) - map.at(y, x, c));
        if (x + 1 < 9) oracle += std::abs(map.at(y, x + 1, c) - map.at(y, x, c));
      }
    }
  }
  oracle /= 54.0;
  const SmoothnessLossResult r = smoothness_loss(map);
  CHECK(r.loss == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(r.loss >= 0.0);
}

TEST_CASE("smoothness gradient matches finite differences") {
  std::mt19937 gen(43);
  for (int inst = 0; inst < 25; ++inst) {
    const Image map = random_normal_map(gen, 5, 4);
    const SmoothnessLossResult r = smoothness_loss(map);
    const double h = 1e-6;
    std::uniform_int_distribution<int> pick(0, 5 * 4 * 3 - 1);
    for (int probe_i = 0; probe_i < 6; ++probe_i) {
      const int i = pick(gen);
      Image probe = map;
      probe.data()[i] += h;
      const double up = smoothness_loss(probe).loss;
      probe.data()[i] -= 2 * h;
      const double down = smoothness_loss(probe).loss;
      check_fd(r.d_normal.data()[i], (up - down) / (2 * h),
               "smooth fd instance " + std::to_string(inst));
    }
  }
}

TEST_CASE("gradient magnitude map is normalized and flat images give zero") {
  std::mt19937 gen(47);
  const Image flat(5, 5, 3, 0.3);
  const Image flat_mag = normalized_gradient_magnitude(flat);
  for (size_t i = 0; i < flat_mag.size(); ++i) CHECK(flat_mag.data()[i] == 0.0);

  const Image img = random_image(gen, 8, 8, 3);
  const Image mag = normalized_gradient_magnitude(img);
  double peak = 0.0;
  for (size_t i = 0; i < mag.size(); ++i) {
    CHECK(mag.data()[i] >= 0.0);
    CHECK(mag.data()[i] <= 1.0);
    peak = std::max(peak, mag.data()[i]);
  }
  CHECK(peak == doctest::Approx(1.0).epsilon(1e-12));
}

namespace {

GaussianPrimitive random_scene_primitive(std::mt19937& gen) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GaussianPrimitive g;
  g.mean = Vec3(1.2 * u(gen), 1.2 * u(gen), 5.0 + u(gen));
  g.log_scale =
      Vec3::Constant(std::log(0.45)) + 0.25 * Vec3(u(gen), u(gen), u(gen));
  g.orientation = random_rotation(gen);
  g.opacity_logit = u(gen);
  for (int ch = 0; ch < 3; ++ch) {
    g.sh(ch, 0) = 0.9 * u(gen);
    for (int k = 1; k < 4; ++k) g.sh(ch, k) = 0.1 * u(gen);
  }
  return g;
}

struct EndToEnd {
  std::vector<GaussianPrimitive> scene;
  ViewCamera view;
  SupervisionBundle bundle;
  LossWeights weights;

  double loss(const std::vector<GaussianPrimitive>& s) const {
    return total_loss(render(s, view), bundle, s, weights).breakdown.total;
  }

  SceneGradients gradient() const {
    const RenderBuffers buf = render(scene, view);
    const TotalLossResult r = total_loss(buf, bundle, scene, weights);
    SceneGradients g =
        render_backward(scene, view, buf, r.d_color, r.d_normal, Image());
    for (size_t i = 0; i < scene.size(); ++i) g.d_log_scale[i] += r.d_log_scale[i];
    return g;
  }
};

EndToEnd make_end_to_end(unsigned seed) {
  std::mt19937 gen(seed);
  EndToEnd e;
  e.scene.resize(5);
  for (auto& g : e.scene) g = random_scene_primitive(gen);

  Camera cam;
  cam.fx = cam.fy = 20.0;
  cam.cx = cam.cy = 8.0;
  cam.width = cam.height = 16;
  e.view = ViewCamera{cam, SE3Pose()};

  // Target rendered from a different random scene keeps photometric residuals
  // generic and away from the L1 kink at zero.
  std::vector<GaussianPrimitive> other(6);
  for (auto& g : other) g = random_scene_primitive(gen);
  e.bundle.target = render(other, e.view).color;
  e.bundle.normal_map = random_normal_map(gen, 16, 16);
  e.bundle.grad_weight = normalized_gradient_magnitude(e.bundle.target);
  return e;
}

}  // namespace

TEST_CASE("total loss breakdown sums to the total and gates its term groups") {
  EndToEnd e = make_end_to_end(53);
  const RenderBuffers buf = render(e.scene, e.view);

  const TotalLossResult full = total_loss(buf, e.bundle, e.scene, e.weights);
  const LossBreakdown& b = full.breakdown;
  CHECK(std::abs(b.total - (b.img + b.erank + b.scale + b.normal +
                            e.weights.lambda_smooth * b.smooth)) < 1e-12);
  CHECK(b.scale > 0.0);

  LossWeights no_shape = e.weights;
  no_shape.use_shape = false;
  const LossBreakdown b1 = total_loss(buf, e.bundle, e.scene, no_shape).breakdown;
  CHECK(b1.erank == 0.0);
  CHECK(b1.img == b.img);

  LossWeights no_normal = e.weights;
  no_normal.use_normal = false;
  const LossBreakdown b2 = total_loss(buf, e.bundle, e.scene, no_normal).breakdown;
  CHECK(b2.scale == 0.0);
  CHECK(b2.normal == 0.0);
  CHECK(b2.smooth == 0.0);
  CHECK(b2.total == doctest::Approx(b2.img + b2.erank).epsilon(1e-12));
}

TEST_CASE("total loss is zero when every term is zero") {
  const Image zero3(4, 4, 3), zero1(4, 4, 1);
  RenderBuffers buf;
  buf.color = zero3;
  buf.normal = zero3;
  buf.alpha = zero1;
  SupervisionBundle bundle{zero3, zero3, zero1};
  const std::vector<GaussianPrimitive> empty_scene;
  const TotalLossResult r = total_loss(buf, bundle, empty_scene, LossWeights{});
  CHECK(r.breakdown.total == 0.0);
}

TEST_CASE("end-to-end total loss gradient matches finite differences at 1e-3 relative") {
  EndToEnd e = make_end_to_end(59);
  const SceneGradients grads = e.gradient();
  const double h = 1e-5;
  auto fd_check = [&](double analytic, double up, double down, const std::string& label) {
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-6});
    CHECK_MESSAGE(std::abs(analytic - fd) <= 1e-3 * denom,
                  label, ": analytic ", analytic, " vs fd ", fd);
  };
  for (size_t i = 0; i < e.scene.size(); ++i) {
    const std::string tag = "primitive " + std::to_string(i);
    for (int k = 0; k < 3; ++k) {
      auto probe = e.scene;
      probe[i].mean(k) += h;
      const double up = e.loss(probe);
      probe[i].mean(k) -= 2 * h;
      fd_check(grads.d_mean[i](k), up, e.loss(probe), tag + " mean " + std::to_string(k));
    }
    for (int k = 0; k < 3; ++k) {
      auto probe = e.scene;
      probe[i].log_scale(k) += h;
      const double up = e.loss(probe);
      probe[i].log_scale(k) -= 2 * h;
      fd_check(grads.d_log_scale[i](k), up, e.loss(probe),
               tag + " log_scale " + std::to_string(k));
    }
    for (int k = 0; k < 3; ++k) {
      auto probe = e.scene;
      probe[i].orientation = e.scene[i].orientation * so3_exp(h * Vec3::Unit(k));
      const double up = e.loss(probe);
      probe[i].orientation = e.scene[i].orientation * so3_exp(-h * Vec3::Unit(k));
      fd_check(grads.d_rotation[i](k), up, e.loss(probe),
               tag + " rotation " + std::to_string(k));
    }
    {
      auto probe = e.scene;
      probe[i].opacity_logit += h;
      const double up = e.loss(probe);
      probe[i].opacity_logit -= 2 * h;
      fd_check(grads.d_opacity_logit[i], up, e.loss(probe), tag + " opacity");
    }
    for (int ch = 0; ch < 3; ++ch) {
      for (int k = 0; k < 4; ++k) {
        auto probe = e.scene;
        probe[i].sh(ch, k) += h;
        const double up = e.loss(probe);
        probe[i].sh(ch, k) -= 2 * h;
        fd_check(grads.d_sh[i](ch, k), up, e.loss(probe),
                 tag + " sh(" + std::to_string(ch) + "," + std::to_string(k) + ")");
      }
    }
  }
}

TEST_CASE("a small step along the negative gradient decreases the total loss") {
  for (const unsigned seed : {61u, 67u, 71u}) {
    EndToEnd e = make_end_to_end(seed);
    const double before = e.loss(e.scene);
    const SceneGradients g = e.gradient();

    const double step = 1e-6;
    auto moved = e.scene;
    for (size_t i = 0; i < moved.size(); ++i) {
      moved[i].mean -= step * g.d_mean[i];
      moved[i].log_scale -= step * g.d_log_scale[i];
      moved[i].orientation =
          moved[i].orientation * so3_exp(-step * g.d_rotation[i]);
      moved[i].opacity_logit -= step * g.d_opacity_logit[i];
      moved[i].sh -= step * g.d_sh[i];
    }
    CHECK(e.loss(moved) < before);
  }
}
