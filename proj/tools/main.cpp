#include <CLI11.hpp>
#include <json.hpp>

#include <msplat/io/colmap.hpp>
#include <msplat/io/image_io.hpp>
#include <msplat/io/ply.hpp>
#include <msplat/losses.hpp>
#include <msplat/metrics.hpp>
#include <msplat/optim.hpp>
#include <msplat/pose_graph.hpp>
#include <msplat/splat.hpp>
#include <msplat/synth.hpp>
#include <msplat/trajectory.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace msplat;

namespace {

// Exit codes: 0 success, 2 input error, 3 non-convergence, 4 numeric failure.
constexpr int kExitInput = 2;
constexpr int kExitNoConvergence = 3;
constexpr int kExitNumeric = 4;

struct CliError {
  int code;
  std::string message;
};

/// Runs an ingestion step; any library failure there is an input error.
template <typename F>
auto input_stage(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError{kExitInput, e.what()};
  }
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) {
    throw CliError{kExitInput, "missing required path for " + what +
                                   " (set it in the config or by flag)"};
  }
  if (!fs::is_regular_file(path)) {
    throw CliError{kExitInput, "missing " + what + " file: " + path};
  }
}

void require_dir(const std::string& path, const std::string& what) {
  if (path.empty()) {
    throw CliError{kExitInput, "missing required path for " + what +
                                   " (set it in the config or by flag)"};
  }
  if (!fs::is_directory(path)) {
    throw CliError{kExitInput, "missing " + what + " directory: " + path};
  }
}

std::string ensure_output_dir(const std::string& path) {
  if (path.empty()) {
    throw CliError{kExitInput, "no output directory configured"};
  }
  fs::create_directories(path);
  return path;
}

struct PathsConfig {
  std::string trajectory;
  std::string times;
  std::string extrinsic;
  std::string colmap_model;
  std::string images;
  std::string normal_maps;
  std::string scene;
  std::string output_dir;
};

struct SolverConfig {
  SolveOptions options;
  double prior_sigma_t = 0.05;
  double prior_sigma_rot_deg = 1.0;
  double relative_sigma_t = 0.01;
  double relative_sigma_rot_deg = 0.1;
  double pixel_sigma = 1.0;
};

struct Config {
  PathsConfig paths;
  LossWeights loss;
  TrainConfig train;
  SolverConfig solver;
};

void reject_unknown_keys(const json& section, const std::string& name,
                         std::initializer_list<const char*> known) {
  for (const auto& [key, value] : section.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return key == k;
        }) == known.end()) {
      throw CliError{kExitInput, "unknown config key: " + name + "." + key};
    }
  }
}

template <typename T>
void read_key(const json& section, const char* key, T& target) {
  if (section.contains(key)) {
    target = section.at(key).get<T>();
  }
}

NormalWeighting parse_normal_weighting(const std::string& name) {
  if (name == "grad_pow5") return NormalWeighting::kGradPow5;
  if (name == "one_minus_grad") return NormalWeighting::kOneMinusGrad;
  throw CliError{kExitInput, "unknown loss.normal_weighting value: " + name +
                                 " (expected grad_pow5 or one_minus_grad)"};
}

Config load_config(const std::string& path) {
  Config config;
  if (path.empty()) return config;
  require_file(path, "config");
  std::ifstream in(path);
  json root;
  try {
    root = json::parse(in);
  } catch (const std::exception& e) {
    throw CliError{kExitInput, "config " + path + ": " + e.what()};
  }
  try {
    reject_unknown_keys(root, "<root>", {"paths", "loss", "train", "solver"});
    if (root.contains("paths")) {
      const json& p = root.at("paths");
      reject_unknown_keys(p, "paths",
                          {"trajectory", "times", "extrinsic", "colmap_model",
                           "images", "normal_maps", "scene", "output_dir"});
      read_key(p, "trajectory", config.paths.trajectory);
      read_key(p, "times", config.paths.times);
      read_key(p, "extrinsic", config.paths.extrinsic);
      read_key(p, "colmap_model", config.paths.colmap_model);
      read_key(p, "images", config.paths.images);
      read_key(p, "normal_maps", config.paths.normal_maps);
      read_key(p, "scene", config.paths.scene);
      read_key(p, "output_dir", config.paths.output_dir);
    }
    if (root.contains("loss")) {
      const json& l = root.at("loss");
      reject_unknown_keys(l, "loss",
                          {"lambda_ssim", "lambda_en", "lambda_smooth",
                           "epsilon_erank", "normal_weighting", "use_shape",
                           "use_normal"});
      read_key(l, "lambda_ssim", config.loss.lambda_ssim);
      read_key(l, "lambda_en", config.loss.lambda_en);
      read_key(l, "lambda_smooth", config.loss.lambda_smooth);
      read_key(l, "epsilon_erank", config.loss.epsilon_erank);
      read_key(l, "use_shape", config.loss.use_shape);
      read_key(l, "use_normal", config.loss.use_normal);
      if (l.contains("normal_weighting")) {
        config.loss.normal_weighting =
            parse_normal_weighting(l.at("normal_weighting").get<std::string>());
      }
    }
    if (root.contains("train")) {
      const json& t = root.at("train");
      reject_unknown_keys(t, "train",
                          {"iterations", "lr_mean", "lr_log_scale",
                           "lr_rotation", "lr_opacity", "lr_color", "seed",
                           "snapshot_cadence", "eval_stride"});
      read_key(t, "iterations", config.train.iterations);
      read_key(t, "lr_mean", config.train.lr_mean);
      read_key(t, "lr_log_scale", config.train.lr_log_scale);
      read_key(t, "lr_rotation", config.train.lr_rotation);
      read_key(t, "lr_opacity", config.train.lr_opacity);
      read_key(t, "lr_color", config.train.lr_color);
      read_key(t, "seed", config.train.seed);
      read_key(t, "snapshot_cadence", config.train.snapshot_cadence);
      read_key(t, "eval_stride", config.train.eval_stride);
    }
    if (root.contains("solver")) {
      const json& s = root.at("solver");
      reject_unknown_keys(
          s, "solver",
          {"max_iterations", "lambda_init", "relative_cost_tol",
           "gradient_tol", "parameter_tol", "huber_delta_px", "prior_sigma_t",
           "prior_sigma_rot_deg", "relative_sigma_t", "relative_sigma_rot_deg",
           "pixel_sigma"});
      read_key(s, "max_iterations", config.solver.options.max_iterations);
      read_key(s, "lambda_init", config.solver.options.lambda_init);
      read_key(s, "relative_cost_tol", config.solver.options.relative_cost_tol);
      read_key(s, "gradient_tol", config.solver.options.gradient_tol);
      read_key(s, "parameter_tol", config.solver.options.parameter_tol);
      read_key(s, "huber_delta_px", config.solver.options.huber_delta_px);
      read_key(s, "prior_sigma_t", config.solver.prior_sigma_t);
      read_key(s, "prior_sigma_rot_deg", config.solver.prior_sigma_rot_deg);
      read_key(s, "relative_sigma_t", config.solver.relative_sigma_t);
      read_key(s, "relative_sigma_rot_deg",
               config.solver.relative_sigma_rot_deg);
      read_key(s, "pixel_sigma", config.solver.pixel_sigma);
    }
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError{kExitInput, "config " + path + ": " + e.what()};
  }
  return config;
}

std::vector<double> load_times(const std::string& path) {
  require_file(path, "camera timestamps");
  std::ifstream in(path);
  std::vector<double> times;
  double t;
  while (in >> t) times.push_back(t);
  if (times.empty()) {
    throw CliError{kExitInput, "no timestamps in " + path};
  }
  return times;
}

Extrinsic load_extrinsic(const std::string& path) {
  require_file(path, "extrinsic");
  std::ifstream in(path);
  double tx, ty, tz, qx, qy, qz, qw;
  if (!(in >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
    throw CliError{kExitInput,
                   "extrinsic " + path + ": expected tx ty tz qx qy qz qw"};
  }
  Extrinsic extrinsic;
  extrinsic.lidar_from_camera.rotation = Rotation(qw, qx, qy, qz);
  extrinsic.lidar_from_camera.translation = Vec3(tx, ty, tz);
  return extrinsic;
}

Mat6 pose_information(double sigma_rot_rad, double sigma_t) {
  Mat6 info = Mat6::Identity();
  const double wr = 1.0 / std::max(sigma_rot_rad, 1e-3);
  const double wt = 1.0 / std::max(sigma_t, 1e-3);
  info.topLeftCorner<3, 3>() *= wr * wr;
  info.bottomRightCorner<3, 3>() *= wt * wt;
  return info;
}

std::vector<PosePrior> interpolate_priors(const Config& config,
                                          std::vector<double>* times_out) {
  return input_stage([&] {
    require_file(config.paths.trajectory, "trajectory");
    const Trajectory traj = load_trajectory(config.paths.trajectory);
    const std::vector<double> times = load_times(config.paths.times);
    const Extrinsic extrinsic = load_extrinsic(config.paths.extrinsic);
    std::vector<PosePrior> priors;
    priors.reserve(times.size());
    for (size_t i = 0; i < times.size(); ++i) {
      PosePrior prior = camera_prior(traj, extrinsic, times[i]);
      prior.camera_id = static_cast<int>(i);
      prior.pose.timestamp = times[i];
      priors.push_back(std::move(prior));
    }
    if (times_out != nullptr) *times_out = times;
    return priors;
  });
}

int cmd_interpolate(const Config& config) {
  const std::vector<PosePrior> priors = interpolate_priors(config, nullptr);
  const std::string out = ensure_output_dir(config.paths.output_dir);
  Trajectory camera_poses;
  camera_poses.samples.reserve(priors.size());
  for (const PosePrior& prior : priors) {
    camera_poses.samples.push_back(prior.pose);
  }
  const std::string path = out + "/camera_priors.tum";
  save_trajectory(path, camera_poses);
  std::cout << "wrote " << priors.size() << " camera priors to " << path
            << "\n";
  return 0;
}

json stats_to_json(const IterationStats& s) {
  return json{{"iteration", s.iteration},
              {"cost", s.cost},
              {"prior_cost", s.prior_cost},
              {"relative_cost", s.relative_cost},
              {"reprojection_cost", s.reprojection_cost},
              {"lambda", s.lambda},
              {"gradient_norm", s.gradient_norm},
              {"step_norm", s.step_norm},
              {"accepted", s.accepted}};
}

int cmd_refine_poses(const Config& config) {
  std::vector<double> times;
  const std::vector<PosePrior> priors = interpolate_priors(config, &times);
  ColmapModel model = input_stage([&] {
    require_dir(config.paths.colmap_model, "COLMAP model");
    return load_colmap_model(config.paths.colmap_model);
  });
  if (model.images.size() != priors.size()) {
    throw CliError{kExitInput,
                   "model has " + std::to_string(model.images.size()) +
                       " images but " + std::to_string(priors.size()) +
                       " timestamps were provided"};
  }

  PoseGraphProblem problem;
  problem.pixel_information =
      1.0 / (config.solver.pixel_sigma * config.solver.pixel_sigma);
  std::map<int, int> camera_pos;
  for (const ColmapCamera& cam : model.cameras) {
    camera_pos[cam.camera_id] = static_cast<int>(problem.cameras.size());
    problem.cameras.push_back(cam.camera);
  }
  const double deg = M_PI / 180.0;
  const Mat6 prior_info = pose_information(
      config.solver.prior_sigma_rot_deg * deg, config.solver.prior_sigma_t);
  const Mat6 relative_info =
      pose_information(config.solver.relative_sigma_rot_deg * deg,
                       config.solver.relative_sigma_t);
  std::map<int, int> image_pos;
  for (size_t i = 0; i < model.images.size(); ++i) {
    image_pos[model.images[i].image_id] = static_cast<int>(i);
    problem.poses.push_back(priors[i].pose);
    if (!camera_pos.count(model.images[i].camera_id)) {
      throw CliError{kExitInput, "image " + model.images[i].name +
                                     " references unknown camera id " +
                                     std::to_string(model.images[i].camera_id)};
    }
    problem.camera_index.push_back(camera_pos.at(model.images[i].camera_id));
    PosePrior prior = priors[i];
    prior.information = prior_info;
    problem.priors.push_back(std::move(prior));
  }
  for (size_t i = 0; i + 1 < priors.size(); ++i) {
    RelativeMeasurement rel;
    rel.camera_i = static_cast<int>(i);
    rel.camera_j = static_cast<int>(i + 1);
    rel.i_from_j =
        se3_compose(se3_inverse(priors[i].pose), priors[i + 1].pose);
    rel.information = relative_info;
    problem.relatives.push_back(std::move(rel));
  }
  for (const ColmapPoint& point : model.points) {
    Landmark lm;
    lm.point = point.xyz;
    for (const auto& [image_id, point2d_idx] : point.track) {
      const ColmapImage& img = model.images[image_pos.at(image_id)];
      lm.observations.push_back(
          Observation{image_pos.at(image_id), img.points2d[point2d_idx]});
    }
    problem.landmarks.push_back(std::move(lm));
  }

  const SolveReport report = solve(problem, config.solver.options);

  const std::string out = ensure_output_dir(config.paths.output_dir);
  for (size_t i = 0; i < model.images.size(); ++i) {
    model.images[i].camera_from_world = se3_inverse(problem.poses[i]);
  }
  for (size_t i = 0; i < model.points.size(); ++i) {
    model.points[i].xyz = problem.landmarks[i].point;
  }
  fs::create_directories(out + "/refined");
  save_colmap_model(out + "/refined", model);
  Trajectory refined;
  for (size_t i = 0; i < problem.poses.size(); ++i) {
    SE3Pose pose = problem.poses[i];
    pose.timestamp = times[i];
    refined.samples.push_back(pose);
  }
  save_trajectory(out + "/refined.tum", refined);
  std::ofstream log(out + "/refine_report.jsonl");
  for (const IterationStats& s : report.history) {
    log << stats_to_json(s).dump() << "\n";
  }
  log << json{{"converged", report.converged},
              {"termination", report.termination},
              {"initial_cost", report.initial_cost},
              {"final_cost", report.final_cost},
              {"iterations", report.iterations}}
             .dump()
      << "\n";

  std::cout << "refined " << problem.poses.size() << " poses and "
            << problem.landmarks.size() << " landmarks: cost "
            << report.initial_cost << " -> " << report.final_cost << " ("
            << report.termination << ")\n";
  if (!report.converged) {
    std::cerr << "solver did not converge; best iterate written to " << out
              << "\n";
    return kExitNoConvergence;
  }
  return 0;
}

std::string image_stem(const std::string& name) {
  return fs::path(name).stem().string();
}

std::vector<TrainView> load_train_views(const Config& config,
                                        const ColmapModel& model) {
  return input_stage([&] {
    require_dir(config.paths.images, "target images");
    require_dir(config.paths.normal_maps, "normal maps");
    std::map<int, const Camera*> cameras;
    for (const ColmapCamera& cam : model.cameras) {
      cameras[cam.camera_id] = &cam.camera;
    }
    std::vector<TrainView> views;
    for (const ColmapImage& img : model.images) {
      const std::string target_path = config.paths.images + "/" + img.name;
      const std::string normal_path =
          config.paths.normal_maps + "/" + image_stem(img.name) + ".pfm";
      require_file(target_path, "target image");
      require_file(normal_path, "normal map");
      TrainView view;
      view.view.camera = *cameras.at(img.camera_id);
      view.view.camera_from_world = img.camera_from_world;
      view.supervision =
          make_supervision(load_png(target_path), load_normal_map(normal_path));
      views.push_back(std::move(view));
    }
    if (views.empty()) {
      throw CliError{kExitInput, "COLMAP model has no images to train on"};
    }
    return views;
  });
}

std::vector<GaussianPrimitive> initial_scene_for_train(
    const Config& config, const ColmapModel& model) {
  return input_stage([&] {
    if (!config.paths.scene.empty()) {
      require_file(config.paths.scene, "initial scene");
      return load_gaussian_ply(config.paths.scene);
    }
    if (model.points.empty()) {
      throw CliError{kExitInput,
                     "no initial scene: the COLMAP model has no points and "
                     "paths.scene is unset"};
    }
    std::vector<Vec3> points;
    std::vector<Vec3> colors;
    for (const ColmapPoint& point : model.points) {
      points.push_back(point.xyz);
      colors.push_back(point.rgb.cast<double>() / 255.0);
    }
    return init_scene(points, colors, TrainConfig{});
  });
}

int cmd_train(const Config& config) {
  ColmapModel model = input_stage([&] {
    require_dir(config.paths.colmap_model, "COLMAP model");
    return load_colmap_model(config.paths.colmap_model);
  });
  const std::vector<TrainView> views = load_train_views(config, model);
  std::vector<GaussianPrimitive> scene = initial_scene_for_train(config, model);

  const std::string out = ensure_output_dir(config.paths.output_dir);
  TrainConfig train_config = config.train;
  train_config.loss_weights = config.loss;
  if (train_config.snapshot_cadence > 0) {
    train_config.snapshot_dir = out;
  }
  input_stage([&] { train_config.validate(); return 0; });

  const TrainResult result = train(scene, views, train_config);

  save_gaussian_ply(out + "/scene.ply", result.scene);
  std::ofstream log(out + "/metrics.jsonl");
  for (size_t i = 0; i < result.report.loss_history.size(); ++i) {
    const LossBreakdown& b = result.report.loss_history[i];
    log << json{{"iteration", i},
                {"img", b.img},
                {"erank", b.erank},
                {"scale", b.scale},
                {"normal", b.normal},
                {"smooth", b.smooth},
                {"total", b.total}}
               .dump()
        << "\n";
  }
  for (const ViewMetrics& m : result.report.view_metrics) {
    log << json{{"view", m.view_index},
                {"held_out", m.held_out},
                {"psnr", m.psnr},
                {"ssim", m.ssim}}
               .dump()
        << "\n";
  }

  double train_psnr = 0.0, eval_psnr = 0.0;
  int n_train = 0, n_eval = 0;
  std::printf("view  split     psnr_db    ssim\n");
  for (const ViewMetrics& m : result.report.view_metrics) {
    std::printf("%4d  %-8s %8.3f  %6.4f\n", m.view_index,
                m.held_out ? "held-out" : "train", m.psnr, m.ssim);
    (m.held_out ? eval_psnr : train_psnr) += m.psnr;
    (m.held_out ? n_eval : n_train) += 1;
  }
  if (n_train > 0) {
    std::printf("mean train psnr: %.3f dB over %d views\n",
                train_psnr / n_train, n_train);
  }
  if (n_eval > 0) {
    std::printf("mean held-out psnr: %.3f dB over %d views\n",
                eval_psnr / n_eval, n_eval);
  }
  std::printf("trained %zu primitives for %d iterations in %.1f s\n",
              result.scene.size(), train_config.iterations,
              result.report.wall_clock_seconds);
  std::cout << "wrote " << out << "/scene.ply and " << out
            << "/metrics.jsonl\n";
  return 0;
}

int cmd_render(const Config& config, int view_index) {
  const ColmapModel model = input_stage([&] {
    require_dir(config.paths.colmap_model, "COLMAP model");
    return load_colmap_model(config.paths.colmap_model);
  });
  const std::vector<GaussianPrimitive> scene = input_stage([&] {
    require_file(config.paths.scene, "scene");
    return load_gaussian_ply(config.paths.scene);
  });
  if (view_index < 0 ||
      view_index >= static_cast<int>(model.images.size())) {
    throw CliError{kExitInput,
                   "view index " + std::to_string(view_index) +
                       " out of range: model has " +
                       std::to_string(model.images.size()) + " images"};
  }
  const ColmapImage& img = model.images[view_index];
  std::map<int, const Camera*> cameras;
  for (const ColmapCamera& cam : model.cameras) {
    cameras[cam.camera_id] = &cam.camera;
  }
  ViewCamera view;
  view.camera = *cameras.at(img.camera_id);
  view.camera_from_world = img.camera_from_world;

  const RenderBuffers buffers = render(scene, view);

  const std::string out = ensure_output_dir(config.paths.output_dir);
  save_png(out + "/color.png", buffers.color, 16);
  save_pfm(out + "/color.pfm", buffers.color);
  save_pfm(out + "/normal.pfm", buffers.normal);
  save_pfm(out + "/alpha.pfm", buffers.alpha);
  std::cout << "rendered view " << view_index << " (" << img.name << ") to "
            << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Gradient checking. Analytic Jacobians are compared against central finite
// differences; --corrupt flips the sign of one named block to prove the
// comparison can fail.

struct BlockReport {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_error < tolerance; }
};

double corrupt_sign(const std::string& corrupt, const std::string& block) {
  return corrupt == block ? -1.0 : 1.0;
}

SE3Pose random_pose(std::mt19937& gen) {
  std::normal_distribution<double> n;
  SE3Pose pose;
  pose.rotation = so3_exp(0.6 * Vec3(n(gen), n(gen), n(gen)));
  pose.translation = Vec3(n(gen), n(gen), n(gen));
  return pose;
}

void check_pose_blocks(const std::string& corrupt,
                       std::vector<BlockReport>& blocks) {
  const double h = 1e-6;
  const double tol = 1e-5;
  std::mt19937 gen(7);
  std::normal_distribution<double> n;

  BlockReport prior_block{"prior", 0.0, tol};
  BlockReport rel_blocks[4] = {{"relative_rot_i", 0.0, tol},
                               {"relative_rot_j", 0.0, tol},
                               {"relative_trans_i", 0.0, tol},
                               {"relative_trans_j", 0.0, tol}};
  BlockReport reproj_blocks[3] = {{"reprojection_rot", 0.0, tol},
                                  {"reprojection_trans", 0.0, tol},
                                  {"reprojection_point", 0.0, tol}};

  const auto perturb = [](const SE3Pose& pose, int axis,
                          double eps) -> SE3Pose {
    SE3Pose out = pose;
    if (axis < 3) {
      out.rotation = pose.rotation * so3_exp(eps * Vec3::Unit(axis));
    } else {
      out.translation += eps * Vec3::Unit(axis - 3);
    }
    return out;
  };

  for (int trial = 0; trial < 25; ++trial) {
    const SE3Pose pose_i = random_pose(gen);
    const SE3Pose pose_j = random_pose(gen);

    PosePrior prior;
    prior.pose = random_pose(gen);
    const Mat6 J_prior =
        corrupt_sign(corrupt, "prior") * prior_jacobian(pose_i, prior);
    for (int axis = 0; axis < 6; ++axis) {
      const Residual6 plus = prior_residual(perturb(pose_i, axis, h), prior);
      const Residual6 minus = prior_residual(perturb(pose_i, axis, -h), prior);
      const Vec6 fd = (plus - minus) / (2.0 * h);
      prior_block.max_error =
          std::max(prior_block.max_error,
                   (J_prior.col(axis) - fd).cwiseAbs().maxCoeff());
    }

    RelativeMeasurement meas;
    meas.i_from_j = random_pose(gen);
    const RelativeJacobians J_rel = relative_jacobians(pose_i, pose_j, meas);
    const Mat63 blocks_analytic[4] = {
        corrupt_sign(corrupt, "relative_rot_i") * J_rel.d_rot_i,
        corrupt_sign(corrupt, "relative_rot_j") * J_rel.d_rot_j,
        corrupt_sign(corrupt, "relative_trans_i") * J_rel.d_trans_i,
        corrupt_sign(corrupt, "relative_trans_j") * J_rel.d_trans_j};
    for (int block = 0; block < 4; ++block) {
      const bool on_i = block == 0 || block == 2;
      const int base = (block < 2) ? 0 : 3;
      for (int axis = 0; axis < 3; ++axis) {
        const SE3Pose pi_p = on_i ? perturb(pose_i, base + axis, h) : pose_i;
        const SE3Pose pi_m = on_i ? perturb(pose_i, base + axis, -h) : pose_i;
        const SE3Pose pj_p = on_i ? pose_j : perturb(pose_j, base + axis, h);
        const SE3Pose pj_m = on_i ? pose_j : perturb(pose_j, base + axis, -h);
        const Vec6 fd = (relative_residual(pi_p, pj_p, meas) -
                         relative_residual(pi_m, pj_m, meas)) /
                        (2.0 * h);
        rel_blocks[block].max_error =
            std::max(rel_blocks[block].max_error,
                     (blocks_analytic[block].col(axis) - fd)
                         .cwiseAbs()
                         .maxCoeff());
      }
    }

    Camera cam;
    cam.width = 640;
    cam.height = 480;
    cam.fx = 500.0;
    cam.fy = 510.0;
    cam.cx = 320.0;
    cam.cy = 240.0;
    const Vec3 X = pose_i * Vec3(0.3 * n(gen), 0.3 * n(gen), 2.0 + n(gen) * 0.2);
    const Vec2 uv(320.0 + 30.0 * n(gen), 240.0 + 30.0 * n(gen));
    const auto J_reproj = reprojection_jacobians(pose_i, cam, X, uv);
    if (!J_reproj.has_value()) continue;
    const Mat23 analytic[3] = {
        corrupt_sign(corrupt, "reprojection_rot") * J_reproj->d_rot,
        corrupt_sign(corrupt, "reprojection_trans") * J_reproj->d_trans,
        corrupt_sign(corrupt, "reprojection_point") * J_reproj->d_point};
    for (int axis = 0; axis < 3; ++axis) {
      const Vec2 rot_fd = (*reprojection_residual(perturb(pose_i, axis, h),
                                                  cam, X, uv) -
                           *reprojection_residual(perturb(pose_i, axis, -h),
                                                  cam, X, uv)) /
                          (2.0 * h);
      const Vec2 trans_fd =
          (*reprojection_residual(perturb(pose_i, 3 + axis, h), cam, X, uv) -
           *reprojection_residual(perturb(pose_i, 3 + axis, -h), cam, X, uv)) /
          (2.0 * h);
      const Vec2 point_fd =
          (*reprojection_residual(pose_i, cam, X + h * Vec3::Unit(axis), uv) -
           *reprojection_residual(pose_i, cam, X - h * Vec3::Unit(axis), uv)) /
          (2.0 * h);
      const Vec2 fds[3] = {rot_fd, trans_fd, point_fd};
      for (int block = 0; block < 3; ++block) {
        reproj_blocks[block].max_error =
            std::max(reproj_blocks[block].max_error,
                     (analytic[block].col(axis) - fds[block])
                         .cwiseAbs()
                         .maxCoeff());
      }
    }
  }

  blocks.push_back(prior_block);
  for (const BlockReport& b : rel_blocks) blocks.push_back(b);
  for (const BlockReport& b : reproj_blocks) blocks.push_back(b);
}

/// Packs the total-loss gradient of one primitive group for the FD check.
struct LossProbe {
  std::vector<GaussianPrimitive> scene;
  ViewCamera view;
  SupervisionBundle supervision;
  LossWeights weights;

  double loss(const std::vector<GaussianPrimitive>& s) const {
    const RenderBuffers buffers = render(s, view);
    return total_loss(buffers, supervision, s, weights).breakdown.total;
  }
};

LossProbe make_loss_probe() {
  std::mt19937 gen(11);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.0, 1.0);

  const auto random_scene = [&](int count) {
    std::vector<GaussianPrimitive> scene;
    for (int i = 0; i < count; ++i) {
      GaussianPrimitive g;
      g.mean = Vec3(0.5 * n(gen), 0.5 * n(gen), 0.4 * n(gen));
      g.log_scale = Vec3(std::log(0.3) + 0.2 * n(gen),
                         std::log(0.3) + 0.2 * n(gen),
                         std::log(0.3) + 0.2 * n(gen));
      g.orientation = so3_exp(Vec3(n(gen), n(gen), n(gen)));
      g.opacity_logit = 0.5 * n(gen);
      g.sh = Mat34::Zero();
      g.sh.col(0) = Vec3(u(gen), u(gen), u(gen));
      g.sh.rightCols<3>() = 0.05 * Mat3::NullaryExpr([&] { return n(gen); });
      scene.push_back(g);
    }
    return scene;
  };

  LossProbe probe;
  probe.scene = random_scene(4);
  probe.view.camera.width = 12;
  probe.view.camera.height = 12;
  probe.view.camera.fx = 15.0;
  probe.view.camera.fy = 15.0;
  probe.view.camera.cx = 6.0;
  probe.view.camera.cy = 6.0;
  probe.view.camera_from_world.translation = Vec3(0.0, 0.0, 3.0);

  const std::vector<GaussianPrimitive> target_scene = random_scene(5);
  const Image target = render(target_scene, probe.view).color;
  Image normal_map(12, 12, 3);
  for (int y = 0; y < 12; ++y) {
    for (int x = 0; x < 12; ++x) {
      Vec3 dir(n(gen), n(gen), n(gen));
      dir.normalize();
      for (int c = 0; c < 3; ++c) normal_map.at(y, x, c) = dir[c];
    }
  }
  probe.supervision = make_supervision(target, normal_map);
  return probe;
}

void check_loss_blocks(const std::string& corrupt,
                       std::vector<BlockReport>& blocks) {
  const LossProbe probe = make_loss_probe();
  const double h = 1e-5;

  const RenderBuffers buffers = render(probe.scene, probe.view);
  const TotalLossResult loss =
      total_loss(buffers, probe.supervision, probe.scene, probe.weights);
  const SceneGradients grads =
      render_backward(probe.scene, probe.view, buffers, loss.d_color,
                      loss.d_normal, Image());

  const char* names[5] = {"loss_mean", "loss_log_scale", "loss_rotation",
                          "loss_opacity", "loss_sh"};
  BlockReport reports[5];
  for (int i = 0; i < 5; ++i) reports[i] = BlockReport{names[i], 0.0, 1e-3};

  const auto fd_of = [&](auto&& apply) {
    std::vector<GaussianPrimitive> plus = probe.scene;
    std::vector<GaussianPrimitive> minus = probe.scene;
    apply(plus, h);
    apply(minus, -h);
    return (probe.loss(plus) - probe.loss(minus)) / (2.0 * h);
  };
  const auto relative_error = [](double analytic, double fd) {
    return std::abs(analytic - fd) /
           std::max({std::abs(analytic), std::abs(fd), 1e-6});
  };

  for (size_t i = 0; i < probe.scene.size(); ++i) {
    for (int axis = 0; axis < 3; ++axis) {
      const double a_mean = corrupt_sign(corrupt, "loss_mean") *
                            grads.d_mean[i][axis];
      reports[0].max_error = std::max(
          reports[0].max_error,
          relative_error(a_mean, fd_of([&](auto& s, double eps) {
                           s[i].mean[axis] += eps;
                         })));
      const double a_scale =
          corrupt_sign(corrupt, "loss_log_scale") *
          (grads.d_log_scale[i][axis] + loss.d_log_scale[i][axis]);
      reports[1].max_error = std::max(
          reports[1].max_error,
          relative_error(a_scale, fd_of([&](auto& s, double eps) {
                           s[i].log_scale[axis] += eps;
                         })));
      const double a_rot = corrupt_sign(corrupt, "loss_rotation") *
                           grads.d_rotation[i][axis];
      reports[2].max_error = std::max(
          reports[2].max_error,
          relative_error(a_rot, fd_of([&](auto& s, double eps) {
                           s[i].orientation =
                               s[i].orientation *
                               so3_exp(eps * Vec3::Unit(axis));
                         })));
    }
    const double a_op = corrupt_sign(corrupt, "loss_opacity") *
                        grads.d_opacity_logit[i];
    reports[3].max_error = std::max(
        reports[3].max_error,
        relative_error(a_op, fd_of([&](auto& s, double eps) {
                         s[i].opacity_logit += eps;
                       })));
    for (int ch = 0; ch < 3; ++ch) {
      for (int k = 0; k < 4; ++k) {
        const double a_sh = corrupt_sign(corrupt, "loss_sh") *
                            grads.d_sh[i](ch, k);
        reports[4].max_error = std::max(
            reports[4].max_error,
            relative_error(a_sh, fd_of([&](auto& s, double eps) {
                             s[i].sh(ch, k) += eps;
                           })));
      }
    }
  }
  for (const BlockReport& b : reports) blocks.push_back(b);
}

int cmd_check_gradients(const std::string& corrupt) {
  static const std::vector<std::string> kBlocks = {
      "prior",           "relative_rot_i",     "relative_rot_j",
      "relative_trans_i", "relative_trans_j",  "reprojection_rot",
      "reprojection_trans", "reprojection_point", "loss_mean",
      "loss_log_scale",  "loss_rotation",      "loss_opacity",
      "loss_sh"};
  if (!corrupt.empty() &&
      std::find(kBlocks.begin(), kBlocks.end(), corrupt) == kBlocks.end()) {
    throw CliError{kExitInput, "unknown block for --corrupt: " + corrupt};
  }

  std::vector<BlockReport> blocks;
  check_pose_blocks(corrupt, blocks);
  check_loss_blocks(corrupt, blocks);

  std::printf("%-22s %12s %10s  %s\n", "block", "max_error", "tolerance",
              "status");
  std::vector<std::string> failed;
  for (const BlockReport& b : blocks) {
    std::printf("%-22s %12.3e %10.0e  %s\n", b.name.c_str(), b.max_error,
                b.tolerance, b.passed() ? "pass" : "FAIL");
    if (!b.passed()) failed.push_back(b.name);
  }
  if (!failed.empty()) {
    std::string joined;
    for (const std::string& name : failed) {
      joined += (joined.empty() ? "" : ", ") + name;
    }
    std::cerr << "gradient check failed for: " << joined << "\n";
    return kExitNumeric;
  }
  std::cout << "all gradient checks passed\n";
  return 0;
}

int cmd_synth(const std::string& world_name, unsigned seed,
              const std::string& out) {
  const WorldSpec spec = input_stage([&] { return parse_world_spec(world_name); });
  const std::string out_dir = ensure_output_dir(out);
  const SyntheticWorld world = make_world(spec, seed);
  const ObservedData data = observe(world);
  write_observations(out_dir, world, data);
  std::cout << "wrote " << world_spec_name(spec) << " (seed " << seed
            << ") to " << out_dir << ": " << world.gt_world_from_camera.size()
            << " views, " << world.landmarks.size() << " landmarks, "
            << data.total_observations << " observations";
  if (data.ambiguous_observations > 0) {
    std::cout << " (" << data.ambiguous_observations << " ambiguous)";
  }
  std::cout << "\n";
  return 0;
}

constexpr const char* kConfigHelp = R"(Config file (JSON; every key optional, flags override):
  paths.trajectory        TUM file of world<-lidar samples
  paths.times             text file, one camera timestamp per line
  paths.extrinsic         lidar<-camera as "tx ty tz qx qy qz qw"
  paths.colmap_model      directory with cameras.txt/images.txt/points3D.txt
  paths.images            directory of PNG target images
  paths.normal_maps       directory of PFM normal maps (<image stem>.pfm)
  paths.scene             gaussian PLY (render input / train initialization)
  paths.output_dir        directory commands write into (created on demand)
  loss.lambda_ssim        SSIM weight inside the photometric term [0.2]
  loss.lambda_en          effective-rank loss weight [0.01]
  loss.lambda_smooth      normal smoothness weight [0.5]
  loss.epsilon_erank      effective-rank log offset [1e-6]
  loss.normal_weighting   grad_pow5 | one_minus_grad [grad_pow5]
  loss.use_shape          enable the effective-rank shape term [true]
  loss.use_normal         enable scale/normal/smoothness terms [true]
  train.iterations        optimizer iterations [3000]
  train.lr_mean           position learning rate [1.6e-4]
  train.lr_log_scale      log-scale learning rate [5e-3]
  train.lr_rotation       rotation learning rate [1e-3]
  train.lr_opacity        opacity-logit learning rate [5e-2]
  train.lr_color          SH coefficient learning rate [2.5e-3]
  train.seed              pipeline seed [0]
  train.snapshot_cadence  write snapshot_NNNNNN.ply every N iterations [0=off]
  train.eval_stride       every Nth view is held out [8]
  solver.max_iterations   LM iteration cap [100]
  solver.lambda_init      initial LM damping [1e-4]
  solver.relative_cost_tol  LM relative cost decrease tolerance [1e-8]
  solver.gradient_tol     LM gradient-norm tolerance [1e-10]
  solver.parameter_tol    LM step-size tolerance [1e-12]
  solver.huber_delta_px   Huber width on reprojection residuals [2.0]
  solver.prior_sigma_t    prior translation sigma, meters [0.05]
  solver.prior_sigma_rot_deg   prior rotation sigma, degrees [1.0]
  solver.relative_sigma_t      relative translation sigma, meters [0.01]
  solver.relative_sigma_rot_deg relative rotation sigma, degrees [0.1]
  solver.pixel_sigma      reprojection sigma, pixels [1.0]
Environment: MSPLAT_THREADS caps worker threads.)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "msplat: trajectory-prior pose refinement and Gaussian-splat "
      "reconstruction"};
  app.require_subcommand(1);
  app.footer(kConfigHelp);
  argv = app.ensure_utf8(argv);

  std::string config_path;
  PathsConfig path_flags;
  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--trajectory", path_flags.trajectory,
                    "override paths.trajectory");
    cmd->add_option("--times", path_flags.times, "override paths.times");
    cmd->add_option("--extrinsic", path_flags.extrinsic,
                    "override paths.extrinsic");
    cmd->add_option("--model", path_flags.colmap_model,
                    "override paths.colmap_model");
    cmd->add_option("--images", path_flags.images, "override paths.images");
    cmd->add_option("--normals", path_flags.normal_maps,
                    "override paths.normal_maps");
    cmd->add_option("--scene", path_flags.scene, "override paths.scene");
    cmd->add_option("--out", path_flags.output_dir,
                    "override paths.output_dir");
  };

  CLI::App* interpolate = app.add_subcommand(
      "interpolate", "Interpolate camera pose priors from a trajectory");
  add_common(interpolate);

  CLI::App* refine = app.add_subcommand(
      "refine-poses", "Refine camera poses and landmarks against priors");
  add_common(refine);

  CLI::App* train_cmd =
      app.add_subcommand("train", "Optimize a Gaussian scene against images");
  add_common(train_cmd);
  int iterations_flag = -1;
  long long seed_flag = -1;
  bool no_normal = false;
  bool no_shape = false;
  train_cmd->add_option("--iterations", iterations_flag,
                        "override train.iterations");
  train_cmd->add_option("--seed", seed_flag, "override train.seed");
  train_cmd->add_flag("--no-normal", no_normal,
                      "disable the normal-consistency loss group");
  train_cmd->add_flag("--no-shape", no_shape,
                      "disable the effective-rank shape loss");

  CLI::App* render_cmd =
      app.add_subcommand("render", "Render one model view of a scene PLY");
  add_common(render_cmd);
  int view_index = 0;
  render_cmd->add_option("--view-index", view_index,
                         "image index in the COLMAP model");

  CLI::App* check = app.add_subcommand(
      "check-gradients", "Compare analytic Jacobians to finite differences");
  std::string corrupt;
  check->add_option("--corrupt", corrupt,
                    "test hook: flip the sign of one analytic block");

  CLI::App* synth_cmd = app.add_subcommand(
      "synth", "Generate a synthetic world with observations");
  std::string world_name;
  unsigned synth_seed = 0;
  std::string synth_out;
  synth_cmd->add_option("--world", world_name,
                        "circle_room | corridor | planar_board")
      ->required();
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    Config config = load_config(config_path);
    const auto override_path = [](std::string& target,
                                  const std::string& flag) {
      if (!flag.empty()) target = flag;
    };
    override_path(config.paths.trajectory, path_flags.trajectory);
    override_path(config.paths.times, path_flags.times);
    override_path(config.paths.extrinsic, path_flags.extrinsic);
    override_path(config.paths.colmap_model, path_flags.colmap_model);
    override_path(config.paths.images, path_flags.images);
    override_path(config.paths.normal_maps, path_flags.normal_maps);
    override_path(config.paths.scene, path_flags.scene);
    override_path(config.paths.output_dir, path_flags.output_dir);

    if (app.got_subcommand(interpolate)) return cmd_interpolate(config);
    if (app.got_subcommand(refine)) return cmd_refine_poses(config);
    if (app.got_subcommand(train_cmd)) {
      if (iterations_flag >= 0) config.train.iterations = iterations_flag;
      if (seed_flag >= 0) {
        config.train.seed = static_cast<std::uint32_t>(seed_flag);
      }
      if (no_normal) config.loss.use_normal = false;
      if (no_shape) config.loss.use_shape = false;
      return cmd_train(config);
    }
    if (app.got_subcommand(render_cmd)) return cmd_render(config, view_index);
    if (app.got_subcommand(check)) return cmd_check_gradients(corrupt);
    if (app.got_subcommand(synth_cmd)) {
      return cmd_synth(world_name, synth_seed, synth_out);
    }
    return kExitInput;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  }
}
