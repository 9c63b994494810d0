#include "msplat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "msplat/io/image_io.hpp"
#include "msplat/io/ply.hpp"

namespace msplat {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

SE3Pose look_at(const Vec3& position, const Vec3& target) {
  const Vec3 forward = (target - position).normalized();
  Vec3 right = forward.cross(Vec3(0.0, 0.0, 1.0));
  if (right.norm() < 1e-9) right = Vec3(1.0, 0.0, 0.0);
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 r_wc;
  r_wc.col(0) = right;
  r_wc.col(1) = down;
  r_wc.col(2) = forward;
  return SE3Pose(Rotation(r_wc), position);
}

SE3Pose circle_room_pose(double t) {
  const double angle = kTwoPi * t / 10.0;
  const Vec3 center(0.0, 0.0, 1.0);
  const Vec3 position =
      center + 2.0 * Vec3(std::cos(angle), std::sin(angle), 0.0);
  SE3Pose pose = look_at(position, center);
  pose.timestamp = t;
  return pose;
}

SE3Pose corridor_pose(double t) {
  const Vec3 position(0.5 + 0.9 * t, 0.0, 1.2);
  SE3Pose pose = look_at(position, position + Vec3(1.0, 0.0, 0.0));
  pose.timestamp = t;
  return pose;
}

SE3Pose planar_board_pose(double t) {
  const double angle = kTwoPi * t / 12.0;
  const Vec3 position(1.0 * std::cos(angle), 1.0 * std::sin(angle), 1.9);
  SE3Pose pose = look_at(position, Vec3::Zero());
  pose.timestamp = t;
  return pose;
}

using PoseFn = SE3Pose (*)(double);

/// Trajectory samples at the camera times and their midpoints, taken from the
/// same constructive pose function as the cameras themselves.
void fill_poses(SyntheticWorld& world, PoseFn pose_at, int n_cameras) {
  for (int i = 0; i < n_cameras; ++i) {
    world.camera_times.push_back(static_cast<double>(i));
    world.gt_world_from_camera.push_back(pose_at(static_cast<double>(i)));
  }
  for (int i = 0; i < n_cameras; ++i) {
    world.gt_trajectory.samples.push_back(world.gt_world_from_camera[i]);
    if (i + 1 < n_cameras) {
      world.gt_trajectory.samples.push_back(pose_at(i + 0.5));
    }
  }
}

void make_circle_room(SyntheticWorld& world, std::mt19937& gen) {
  world.camera.fx = world.camera.fy = 260.0;
  world.camera.cx = 160.0;
  world.camera.cy = 120.0;
  world.camera.width = 320;
  world.camera.height = 240;
  fill_poses(world, circle_room_pose, 10);

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int k = 0; k < 60; ++k) {  // wall points
    const double a = -3.2 + 6.4 * u01(gen);
    const double z = 0.2 + 2.1 * u01(gen);
    switch (k % 4) {
      case 0: world.landmarks.push_back(Vec3(3.2, a, z)); break;
      case 1: world.landmarks.push_back(Vec3(-3.2, a, z)); break;
      case 2: world.landmarks.push_back(Vec3(a, 3.2, z)); break;
      default: world.landmarks.push_back(Vec3(a, -3.2, z)); break;
    }
  }
  for (int k = 0; k < 40; ++k) {  // interior points
    world.landmarks.push_back(Vec3(-1.4 + 2.8 * u01(gen),
                                   -1.4 + 2.8 * u01(gen),
                                   0.3 + 1.6 * u01(gen)));
  }
}

void make_corridor(SyntheticWorld& world, std::mt19937& gen) {
  world.camera.fx = world.camera.fy = 260.0;
  world.camera.cx = 160.0;
  world.camera.cy = 120.0;
  world.camera.width = 320;
  world.camera.height = 240;
  fill_poses(world, corridor_pose, 10);

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double period = 2.0;  // look-alike landmarks repeat at this spacing
  for (int k = 0; k < 24; ++k) {
    const double y = (k % 2 == 0) ? 1.5 : -1.5;
    const Vec3 a(1.0 + 5.5 * u01(gen), y, 0.4 + 1.6 * u01(gen));
    const Vec3 b = a + Vec3(period, 0.0, 0.0);
    const int idx_a = static_cast<int>(world.landmarks.size());
    world.landmarks.push_back(a);
    world.landmarks.push_back(b);
    world.twin_landmarks.emplace_back(idx_a, idx_a + 1);
  }
  for (int k = 0; k < 16; ++k) {  // unambiguous filler points
    const double y = (u01(gen) < 0.5) ? 1.5 : -1.5;
    world.landmarks.push_back(Vec3(0.5 + 9.0 * u01(gen), y, 0.3 + 1.8 * u01(gen)));
  }
}

/// The disk tiling overlaps enough that every camera ray is covered: an
/// empty render is never competitive with fitting the board, which keeps
/// the smoothness term from rewarding erased footprints.
void make_planar_board(SyntheticWorld& world, std::mt19937& gen) {
  world.camera.fx = world.camera.fy = 80.0;
  world.camera.cx = world.camera.cy = 24.0;
  world.camera.width = world.camera.height = 48;
  fill_poses(world, planar_board_pose, 12);

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) {
      GaussianPrimitive disk;
      disk.mean = Vec3((i - 3.0) * 0.3, (j - 3.0) * 0.3, 0.0);
      disk.log_scale = Vec3(std::log(0.20), std::log(0.20), std::log(0.002));
      disk.orientation = so3_exp(Vec3(0.0, 0.0, kTwoPi * u01(gen)));
      disk.opacity_logit = 6.0;
      disk.sh.setZero();
      // Mostly uniform texture with sparse accents: photometric cues alone
      // underconstrain the flat regions, which is where the geometric
      // supervision earns its keep.
      const bool accent = (i + 2 * j) % 5 == 0;
      for (int ch = 0; ch < 3; ++ch) {
        const double base = (ch == 1) ? 0.45 : 0.38;
        const double value = accent ? 0.15 + 0.7 * u01(gen)
                                    : base + 0.04 * (u01(gen) - 0.5);
        disk.sh(ch, 0) = (value - 0.5) / kSh0;
      }
      world.scene.push_back(disk);
      world.landmarks.push_back(disk.mean);

      // Initial guess: narrow strips lying roughly in the board plane with
      // perturbed tilts. Flattening the minor axis is then benign (the
      // surface really is flat), while strip width and orientation still
      // leave real work for the shape and normal terms.
      GaussianPrimitive strip;
      strip.mean = disk.mean + Vec3(0.04 * n(gen), 0.04 * n(gen), 0.005 * n(gen));
      strip.log_scale = Vec3(std::log(0.16), std::log(0.08), std::log(0.012));
      strip.orientation = so3_exp(Vec3(0.0, 0.0, kTwoPi * u01(gen))) *
                          so3_exp(Vec3(0.15 * n(gen), 0.15 * n(gen), 0.0));
      strip.opacity_logit = 0.4;
      strip.sh.setZero();
      world.initial_scene.push_back(strip);
    }
  }
  world.sigma_pixel = 0.2;
  world.sigma_image = 0.03;
}

/// Analytic normal map of the board plane z=0 (extent +-3.0) in the camera
/// frame; background pixels face the camera.
Image board_normal_map(const Camera& cam, const SE3Pose& world_from_camera) {
  Image map(cam.height, cam.width, 3);
  const Mat3 r_wc = world_from_camera.rotation.matrix();
  const Mat3 r_cw = r_wc.transpose();
  const Vec3 origin = world_from_camera.translation;
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 dir_cam((x + 0.5 - cam.cx) / cam.fx,
                         (y + 0.5 - cam.cy) / cam.fy, 1.0);
      const Vec3 dir_world = r_wc * dir_cam;
      Vec3 normal_cam(0.0, 0.0, -1.0);
      if (std::abs(dir_world.z()) > 1e-12) {
        const double t = -origin.z() / dir_world.z();
        if (t > 0.0) {
          const Vec3 hit = origin + t * dir_world;
          if (std::abs(hit.x()) <= 3.0 && std::abs(hit.y()) <= 3.0) {
            const Vec3 normal_world =
                origin.z() >= 0.0 ? Vec3(0.0, 0.0, 1.0) : Vec3(0.0, 0.0, -1.0);
            normal_cam = r_cw * normal_world;
          }
        }
      }
      for (int c = 0; c < 3; ++c) map.at(y, x, c) = normal_cam(c);
    }
  }
  return map;
}

}  // namespace

WorldSpec parse_world_spec(const std::string& name) {
  if (name == "circle_room") return WorldSpec::kCircleRoom;
  if (name == "corridor") return WorldSpec::kCorridor;
  if (name == "planar_board") return WorldSpec::kPlanarBoard;
  throw std::invalid_argument("unknown world spec: " + name);
}

std::string world_spec_name(WorldSpec spec) {
  switch (spec) {
    case WorldSpec::kCircleRoom: return "circle_room";
    case WorldSpec::kCorridor: return "corridor";
    default: return "planar_board";
  }
}

SyntheticWorld make_world(WorldSpec spec, std::uint32_t seed) {
  SyntheticWorld world;
  world.spec = spec;
  world.seed = seed;
  std::mt19937 gen(seed);
  switch (spec) {
    case WorldSpec::kCircleRoom: make_circle_room(world, gen); break;
    case WorldSpec::kCorridor: make_corridor(world, gen); break;
    case WorldSpec::kPlanarBoard: make_planar_board(world, gen); break;
  }
  return world;
}

ObservedData observe(const SyntheticWorld& world) {
  std::mt19937 gen(world.seed ^ 0x9E3779B9u);
  std::normal_distribution<double> n(0.0, 1.0);
  ObservedData data;

  data.prior_trajectory = world.gt_trajectory;
  for (SE3Pose& sample : data.prior_trajectory.samples) {
    const Vec3 dt(n(gen), n(gen), n(gen));
    const Vec3 dr(n(gen), n(gen), n(gen));
    sample.translation += world.sigma_prior_t * dt;
    sample.rotation = sample.rotation * so3_exp(world.sigma_prior_rot * dr);
  }

  ColmapCamera cam;
  cam.camera_id = 1;
  cam.camera = world.camera;
  data.model.cameras.push_back(cam);

  const int n_views = static_cast<int>(world.gt_world_from_camera.size());
  for (int i = 0; i < n_views; ++i) {
    ColmapImage img;
    img.image_id = i + 1;
    img.camera_id = 1;
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03d.png", i);
    img.name = name;
    img.camera_from_world = se3_inverse(world.gt_world_from_camera[i]);
    for (size_t k = 0; k < world.landmarks.size(); ++k) {
      const Vec3 x_cam = img.camera_from_world * world.landmarks[k];
      if (x_cam.z() <= 0.2) continue;
      const Vec2 uv = world.camera.project(x_cam);
      if (!world.camera.contains(uv)) continue;
      img.points2d.push_back(uv + world.sigma_pixel * Vec2(n(gen), n(gen)));
      img.point3d_ids.push_back(static_cast<long long>(k) + 1);
      ++data.total_observations;
    }
    data.model.images.push_back(std::move(img));
  }

  if (!world.twin_landmarks.empty()) {
    std::unordered_map<long long, long long> twin_of;
    for (const auto& [a, b] : world.twin_landmarks) {
      twin_of[a + 1] = b + 1;
      twin_of[b + 1] = a + 1;
    }
    const auto block_fraction = [&](int lo, int hi) {
      int count = 0;
      for (int i = lo; i <= hi; ++i) {
        for (const long long id : data.model.images[i].point3d_ids) {
          if (twin_of.count(id)) ++count;
        }
      }
      return static_cast<double>(count) /
             std::max(1, data.total_observations);
    };
    // Grow a contiguous camera block from the middle until the swapped share
    // reaches ~35% of all observations.
    int lo = n_views / 3;
    int hi = std::min(n_views - 1, lo + n_views / 3 - 1);
    bool grow_high = true;
    while (block_fraction(lo, hi) < 0.35 && (lo > 0 || hi < n_views - 1)) {
      if (grow_high && hi < n_views - 1) {
        ++hi;
      } else if (lo > 0) {
        --lo;
      } else {
        ++hi;
      }
      grow_high = !grow_high;
    }
    for (int i = lo; i <= hi; ++i) {
      for (long long& id : data.model.images[i].point3d_ids) {
        const auto it = twin_of.find(id);
        if (it != twin_of.end()) {
          id = it->second;
          ++data.ambiguous_observations;
        }
      }
    }
  }

  for (size_t k = 0; k < world.landmarks.size(); ++k) {
    ColmapPoint p;
    p.point3d_id = static_cast<long long>(k) + 1;
    p.xyz = world.landmarks[k];
    p.rgb = Eigen::Matrix<int, 3, 1>(200, 200, 200);
    data.model.points.push_back(std::move(p));
  }
  for (const ColmapImage& img : data.model.images) {
    for (size_t idx = 0; idx < img.point3d_ids.size(); ++idx) {
      data.model.points[img.point3d_ids[idx] - 1].track.emplace_back(
          img.image_id, static_cast<int>(idx));
    }
  }

  for (int i = 0; i + 1 < n_views; ++i) {
    RelativeMeasurement meas;
    meas.camera_i = i;
    meas.camera_j = i + 1;
    meas.i_from_j = se3_compose(se3_inverse(world.gt_world_from_camera[i]),
                                world.gt_world_from_camera[i + 1]);
    data.relatives.push_back(meas);
  }

  for (int i = 0; i < n_views; ++i) {
    const ViewCamera view{world.camera,
                          se3_inverse(world.gt_world_from_camera[i])};
    Image target = render(world.scene, view).color;
    if (world.sigma_image > 0.0) {
      for (size_t p = 0; p < target.size(); ++p) {
        target.data()[p] =
            std::clamp(target.data()[p] + world.sigma_image * n(gen), 0.0, 1.0);
      }
    }
    data.targets.push_back(std::move(target));
    if (world.spec == WorldSpec::kPlanarBoard) {
      data.normal_maps.push_back(
          board_normal_map(world.camera, world.gt_world_from_camera[i]));
    } else {
      Image map(world.camera.height, world.camera.width, 3);
      for (int y = 0; y < map.height(); ++y) {
        for (int x = 0; x < map.width(); ++x) map.at(y, x, 2) = -1.0;
      }
      data.normal_maps.push_back(std::move(map));
    }
  }
  return data;
}

void write_observations(const std::string& dir, const SyntheticWorld& world,
                        const ObservedData& data) {
  namespace fs = std::filesystem;
  const fs::path base(dir);
  fs::create_directories(base / "images");
  fs::create_directories(base / "normals");

  save_colmap_model((base / "colmap").string(), data.model);
  save_trajectory((base / "prior.tum").string(), data.prior_trajectory);
  save_trajectory((base / "ground_truth.tum").string(), world.gt_trajectory);

  {
    std::ofstream out(base / "times.txt");
    if (!out) throw std::runtime_error("cannot write times.txt");
    char buf[32];
    for (const double t : world.camera_times) {
      std::snprintf(buf, sizeof(buf), "%.9f\n", t);
      out << buf;
    }
  }
  {
    // lidar <- camera mount transform: tx ty tz qx qy qz qw
    std::ofstream out(base / "extrinsic.txt");
    if (!out) throw std::runtime_error("cannot write extrinsic.txt");
    out << "0 0 0 0 0 0 1\n";
  }

  for (size_t i = 0; i < data.targets.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03zu.png", i);
    save_png((base / "images" / name).string(), data.targets[i], 16);
    std::snprintf(name, sizeof(name), "view_%03zu.pfm", i);
    save_normal_map((base / "normals" / name).string(), data.normal_maps[i]);
  }

  if (!world.initial_scene.empty()) {
    save_gaussian_ply((base / "init.ply").string(), world.initial_scene);
  }
}

PoseGraphProblem make_pose_problem(const SyntheticWorld& world,
                                   const ObservedData& data, bool with_priors) {
  PoseGraphProblem problem;
  problem.cameras.push_back(world.camera);
  const Extrinsic identity_mount;

  const double rot_info =
      1.0 / std::pow(std::max(world.sigma_prior_rot, 1e-3), 2);
  const double trans_info =
      1.0 / std::pow(std::max(world.sigma_prior_t, 1e-3), 2);
  for (size_t i = 0; i < world.camera_times.size(); ++i) {
    PosePrior prior = camera_prior(data.prior_trajectory, identity_mount,
                                   world.camera_times[i]);
    prior.camera_id = static_cast<int>(i);
    prior.information.topLeftCorner<3, 3>() = rot_info * Mat3::Identity();
    prior.information.bottomRightCorner<3, 3>() = trans_info * Mat3::Identity();
    problem.poses.push_back(prior.pose);
    problem.camera_index.push_back(0);
    if (with_priors) problem.priors.push_back(prior);
  }
  // The no-prior variant is reprojection-only: the first two poses pin the
  // gauge and all structure must come from the image measurements.
  if (with_priors) {
    problem.relatives = data.relatives;
  } else {
    problem.fixed_pose_ids = {0, 1};
  }

  std::unordered_map<int, int> image_index;
  for (size_t i = 0; i < data.model.images.size(); ++i) {
    image_index[data.model.images[i].image_id] = static_cast<int>(i);
  }
  TriangulationOptions triangulation;
  triangulation.max_reprojection_px = 30.0;
  for (const ColmapPoint& point : data.model.points) {
    Landmark lm;
    std::vector<PosedObservation> posed;
    for (const auto& [image_id, idx] : point.track) {
      const int cam = image_index.at(image_id);
      const Vec2 uv = data.model.images[cam].points2d[idx];
      lm.observations.push_back({cam, uv});
      posed.push_back({problem.poses[cam], world.camera, uv});
    }
    const std::optional<Vec3> tri =
        posed.size() >= 2 ? triangulate_dlt(posed, triangulation)
                          : std::nullopt;
    lm.point = tri.value_or(point.xyz);
    problem.landmarks.push_back(std::move(lm));
  }
  return problem;
}

}  // namespace msplat
