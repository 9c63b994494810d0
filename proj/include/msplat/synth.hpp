#pragma once

#include <msplat/io/colmap.hpp>
#include <msplat/pose_graph.hpp>
#include <msplat/splat.hpp>
#include <msplat/trajectory.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace msplat {

/// Fixed synthetic worlds, cited by name in the acceptance tests:
///   circle_room  - cameras on a circle inside a landmark-lined room
///   corridor     - forward motion past period-repeated wall landmarks with a
///                  contiguous block of deliberately swapped correspondences
///   planar_board - textured disk-Gaussian board with analytic normals and a
///                  deliberately coarse strip initialization
enum class WorldSpec { kCircleRoom, kCorridor, kPlanarBoard };

/// Maps "circle_room" / "corridor" / "planar_board" to the enum; throws
/// std::invalid_argument for anything else.
WorldSpec parse_world_spec(const std::string& name);
std::string world_spec_name(WorldSpec spec);

struct SyntheticWorld {
  WorldSpec spec = WorldSpec::kCircleRoom;
  std::uint32_t seed = 0;
  Camera camera;
  std::vector<double> camera_times;
  std::vector<SE3Pose> gt_world_from_camera;
  Trajectory gt_trajectory;  // body frame == camera frame (identity extrinsic)
  std::vector<Vec3> landmarks;
  std::vector<std::pair<int, int>> twin_landmarks;  // corridor look-alikes
  std::vector<GaussianPrimitive> scene;          // renderable ground truth
  std::vector<GaussianPrimitive> initial_scene;  // training start (planar_board)
  double sigma_pixel = 0.5;
  double sigma_image = 0.0;  // sensor noise on rendered targets (planar_board)
  double sigma_prior_t = 0.05;
  double sigma_prior_rot = 0.017453292519943295;  // 1 degree
};

/// Deterministic world: the same (spec, seed) pair regenerates every field
/// bit-exactly. Noise parameters are defaults the caller may override before
/// observe().
SyntheticWorld make_world(WorldSpec spec, std::uint32_t seed);

struct ObservedData {
  ColmapModel model;
  Trajectory prior_trajectory;                 // ground truth + prior noise
  std::vector<RelativeMeasurement> relatives;  // noiseless consecutive pairs
  std::vector<Image> targets;                  // rendered color per view
  std::vector<Image> normal_maps;              // camera frame, unit per pixel
  int ambiguous_observations = 0;
  int total_observations = 0;
};

/// Deterministic observations of the world under its noise settings; noise is
/// applied in observation space only (pixels and prior poses), seeded from
/// the world seed.
ObservedData observe(const SyntheticWorld& world);

/// Writes everything observe produced in the formats the io layer reads:
///   colmap/{cameras,images,points3D}.txt
///   prior.tum, ground_truth.tum, times.txt, extrinsic.txt
///   images/view_###.png (16-bit), normals/view_###.pfm
///   init.ply when the world carries an initial scene
void write_observations(const std::string& dir, const SyntheticWorld& world,
                        const ObservedData& data);

/// Pose-graph problem over the observed data: poses start at the prior
/// trajectory interpolated at the camera times, landmarks at DLT
/// triangulations from those poses (stored model position as fallback).
/// with_priors=false makes the problem reprojection-only: pose anchors and
/// relative constraints are dropped and the first two poses are gauge-fixed.
PoseGraphProblem make_pose_problem(const SyntheticWorld& world,
                                   const ObservedData& data, bool with_priors);

}  // namespace msplat
