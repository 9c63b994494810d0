#include <doctest.h>

#include <msplat/io/colmap.hpp>
#include <msplat/io/image_io.hpp>
#include <msplat/io/ply.hpp>
#include <msplat/metrics.hpp>
#include <msplat/synth.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

using namespace msplat;

namespace {

bool poses_bitwise_equal(const SE3Pose& a, const SE3Pose& b) {
  return a.translation == b.translation &&
         a.rotation.quat().coeffs() == b.rotation.quat().coeffs();
}

std::vector<SE3Pose> gt_poses(const SyntheticWorld& world) {
  return world.gt_world_from_camera;
}

}  // namespace

TEST_CASE("world spec names round-trip and unknown names are rejected") {
  for (const auto spec : {WorldSpec::kCircleRoom, WorldSpec::kCorridor,
                          WorldSpec::kPlanarBoard}) {
    CHECK(parse_world_spec(world_spec_name(spec)) == spec);
  }
  CHECK_THROWS_AS(parse_world_spec("diagon_alley"), std::invalid_argument);
}

TEST_CASE("the same spec and seed regenerate the world and observations bit-exactly") {
  for (const auto spec : {WorldSpec::kCircleRoom, WorldSpec::kCorridor,
                          WorldSpec::kPlanarBoard}) {
    const SyntheticWorld a = make_world(spec, 7);
    const SyntheticWorld b = make_world(spec, 7);
    REQUIRE(a.landmarks.size() == b.landmarks.size());
    for (size_t i = 0; i < a.landmarks.size(); ++i) {
      CHECK(a.landmarks[i] == b.landmarks[i]);
    }
    REQUIRE(a.gt_trajectory.samples.size() == b.gt_trajectory.samples.size());
    for (size_t i = 0; i < a.gt_trajectory.samples.size(); ++i) {
      CHECK(poses_bitwise_equal(a.gt_trajectory.samples[i],
                                b.gt_trajectory.samples[i]));
    }
    REQUIRE(a.scene.size() == b.scene.size());
    for (size_t i = 0; i < a.scene.size(); ++i) {
      CHECK(a.scene[i].sh == b.scene[i].sh);
      CHECK(a.scene[i].mean == b.scene[i].mean);
    }

    const ObservedData oa = observe(a);
    const ObservedData ob = observe(b);
    REQUIRE(oa.model.images.size() == ob.model.images.size());
    for (size_t i = 0; i < oa.model.images.size(); ++i) {
      REQUIRE(oa.model.images[i].points2d.size() ==
              ob.model.images[i].points2d.size());
      for (size_t k = 0; k < oa.model.images[i].points2d.size(); ++k) {
        CHECK(oa.model.images[i].points2d[k] == ob.model.images[i].points2d[k]);
        CHECK(oa.model.images[i].point3d_ids[k] ==
              ob.model.images[i].point3d_ids[k]);
      }
    }
    CHECK(oa.ambiguous_observations == ob.ambiguous_observations);
  }
}

TEST_CASE("circle_room camera centers lie on the circle to 1e-12") {
  const SyntheticWorld world = make_world(WorldSpec::kCircleRoom, 3);
  REQUIRE(world.gt_world_from_camera.size() == 10);
  for (const SE3Pose& pose : world.gt_world_from_camera) {
    const Vec3 center(0.0, 0.0, 1.0);
    CHECK(std::abs((pose.translation - center).norm() - 2.0) < 1e-12);
    CHECK(std::abs(pose.translation.z() - 1.0) < 1e-12);
  }
  // Trajectory samples at the camera times are those cameras exactly.
  CHECK(poses_bitwise_equal(world.gt_trajectory.samples[0],
                            world.gt_world_from_camera[0]));
  CHECK(poses_bitwise_equal(world.gt_trajectory.samples[2],
                            world.gt_world_from_camera[1]));
}

TEST_CASE("corridor observations contain at least 30 percent ambiguous matches") {
  for (const std::uint32_t seed : {1u, 5u, 9u}) {
    const SyntheticWorld world = make_world(WorldSpec::kCorridor, seed);
    const ObservedData data = observe(world);
    REQUIRE(data.total_observations > 0);
    const double fraction = static_cast<double>(data.ambiguous_observations) /
                            data.total_observations;
    CHECK(fraction >= 0.3);
    for (const auto& [a, b] : world.twin_landmarks) {
      const Vec3 diff = world.landmarks[b] - world.landmarks[a];
      CHECK((diff - Vec3(2.0, 0.0, 0.0)).norm() < 1e-12);
    }
  }
}

TEST_CASE("zero noise reproduces exact projections and exact priors") {
  SyntheticWorld world = make_world(WorldSpec::kCircleRoom, 11);
  world.sigma_pixel = 0.0;
  world.sigma_prior_t = 0.0;
  world.sigma_prior_rot = 0.0;
  const ObservedData data = observe(world);

  for (const ColmapImage& img : data.model.images) {
    for (size_t k = 0; k < img.points2d.size(); ++k) {
      const Vec3 x_cam =
          img.camera_from_world * world.landmarks[img.point3d_ids[k] - 1];
      REQUIRE(x_cam.z() > 0.0);
      const Vec2 uv = world.camera.project(x_cam);
      CHECK((img.points2d[k] - uv).norm() == 0.0);
    }
  }
  REQUIRE(data.prior_trajectory.samples.size() ==
          world.gt_trajectory.samples.size());
  for (size_t i = 0; i < data.prior_trajectory.samples.size(); ++i) {
    CHECK((data.prior_trajectory.samples[i].translation -
           world.gt_trajectory.samples[i].translation)
              .norm() == 0.0);
    CHECK(data.prior_trajectory.samples[i].rotation.angle_to(
              world.gt_trajectory.samples[i].rotation) < 1e-15);
  }
}

TEST_CASE("pixel noise sigma 0.5 shows up in the empirical residual std") {
  double sum_sq = 0.0;
  long long count = 0;
  for (std::uint32_t seed = 0; seed < 20; ++seed) {
    SyntheticWorld world = make_world(WorldSpec::kCircleRoom, seed);
    world.sigma_pixel = 0.5;
    const ObservedData data = observe(world);
    for (const ColmapImage& img : data.model.images) {
      for (size_t k = 0; k < img.points2d.size(); ++k) {
        const Vec3 x_cam =
            img.camera_from_world * world.landmarks[img.point3d_ids[k] - 1];
        const Vec2 residual = img.points2d[k] - world.camera.project(x_cam);
        sum_sq += residual.squaredNorm();
        count += 2;
      }
    }
  }
  REQUIRE(count >= 10000);
  const double std_dev = std::sqrt(sum_sq / count);
  MESSAGE("residual std ", std_dev, " over ", count, " samples");
  CHECK(std_dev >= 0.45);
  CHECK(std_dev <= 0.55);
}

TEST_CASE("normal maps are unit-norm per pixel") {
  for (const auto spec : {WorldSpec::kPlanarBoard, WorldSpec::kCircleRoom}) {
    const SyntheticWorld world = make_world(spec, 2);
    const ObservedData data = observe(world);
    REQUIRE(!data.normal_maps.empty());
    for (const Image& map : data.normal_maps) {
      for (int y = 0; y < map.height(); ++y) {
        for (int x = 0; x < map.width(); ++x) {
          const Vec3 n(map.at(y, x, 0), map.at(y, x, 1), map.at(y, x, 2));
          CHECK(std::abs(n.norm() - 1.0) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("planar_board renders nonempty targets while pose worlds render black") {
  const SyntheticWorld board = make_world(WorldSpec::kPlanarBoard, 4);
  const ObservedData board_data = observe(board);
  double board_sum = 0.0;
  for (const Image& img : board_data.targets) {
    for (size_t i = 0; i < img.size(); ++i) board_sum += img.data()[i];
  }
  CHECK(board_sum > 1.0);

  const SyntheticWorld room = make_world(WorldSpec::kCircleRoom, 4);
  const ObservedData room_data = observe(room);
  for (const Image& img : room_data.targets) {
    for (size_t i = 0; i < img.size(); ++i) CHECK(img.data()[i] == 0.0);
  }
}

TEST_CASE("zero-noise observations and exact priors solve back to ground truth") {
  SyntheticWorld world = make_world(WorldSpec::kCircleRoom, 13);
  world.sigma_pixel = 0.0;
  world.sigma_prior_t = 0.0;
  world.sigma_prior_rot = 0.0;
  const ObservedData data = observe(world);
  PoseGraphProblem problem = make_pose_problem(world, data, /*with_priors=*/true);
  const SolveReport report = solve(problem);
  CHECK(report.converged);
  CHECK(ate_rmse(problem.poses, gt_poses(world), /*align=*/false) < 1e-8);
}

TEST_CASE("pose problem layout follows the observed data") {
  const SyntheticWorld world = make_world(WorldSpec::kCorridor, 17);
  const ObservedData data = observe(world);

  const PoseGraphProblem with = make_pose_problem(world, data, true);
  CHECK(with.poses.size() == world.camera_times.size());
  CHECK(with.priors.size() == world.camera_times.size());
  CHECK(with.fixed_pose_ids.empty());
  CHECK(with.relatives.size() == world.camera_times.size() - 1);
  CHECK(with.landmarks.size() == world.landmarks.size());

  const PoseGraphProblem without = make_pose_problem(world, data, false);
  CHECK(without.priors.empty());
  CHECK(without.relatives.empty());
  REQUIRE(without.fixed_pose_ids.size() == 2);
  CHECK(without.fixed_pose_ids[0] == 0);
  CHECK(without.fixed_pose_ids[1] == 1);

  // Landmark observations carry the model's pixel measurements verbatim.
  const ColmapImage& img = data.model.images[2];
  REQUIRE(!img.points2d.empty());
  const long long id = img.point3d_ids[0];
  const Landmark& lm = with.landmarks[id - 1];
  bool found = false;
  for (const Observation& obs : lm.observations) {
    if (obs.camera_id == 2 && (obs.uv - img.points2d[0]).norm() == 0.0) {
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("emitted files re-parse through the io layer") {
  const SyntheticWorld world = make_world(WorldSpec::kPlanarBoard, 19);
  const ObservedData data = observe(world);
  const auto dir = std::filesystem::temp_directory_path() / "msplat_synth_io";
  std::filesystem::remove_all(dir);
  write_observations(dir.string(), world, data);

  const ColmapModel model = load_colmap_model((dir / "colmap").string());
  REQUIRE(model.cameras.size() == 1);
  CHECK(model.cameras[0].camera.fx == world.camera.fx);
  REQUIRE(model.images.size() == data.model.images.size());
  for (size_t i = 0; i < model.images.size(); ++i) {
    const ColmapImage& in = data.model.images[i];
    const ColmapImage& out = model.images[i];
    CHECK(out.name == in.name);
    CHECK((out.camera_from_world.translation - in.camera_from_world.translation)
              .norm() == 0.0);
    CHECK(out.camera_from_world.rotation.angle_to(
              in.camera_from_world.rotation) < 1e-15);
    REQUIRE(out.points2d.size() == in.points2d.size());
    for (size_t k = 0; k < out.points2d.size(); ++k) {
      CHECK((out.points2d[k] - in.points2d[k]).norm() == 0.0);
      CHECK(out.point3d_ids[k] == in.point3d_ids[k]);
    }
  }
  REQUIRE(model.points.size() == data.model.points.size());
  for (size_t i = 0; i < model.points.size(); ++i) {
    CHECK((model.points[i].xyz - data.model.points[i].xyz).norm() == 0.0);
    CHECK(model.points[i].track == data.model.points[i].track);
  }

  const Trajectory prior = load_trajectory((dir / "prior.tum").string());
  REQUIRE(prior.samples.size() == data.prior_trajectory.samples.size());
  for (size_t i = 0; i < prior.samples.size(); ++i) {
    CHECK(poses_bitwise_equal(prior.samples[i],
                              data.prior_trajectory.samples[i]));
  }

  // PNG targets are 16-bit quantized; PFM normals are float32 casts.
  const Image target = load_png((dir / "images" / "view_000.png").string());
  REQUIRE(target.same_shape(data.targets[0]));
  for (size_t i = 0; i < target.size(); ++i) {
    CHECK(std::abs(target.data()[i] - data.targets[0].data()[i]) < 1.0 / 65535.0);
  }
  const Image normals =
      load_normal_map((dir / "normals" / "view_000.pfm").string());
  REQUIRE(normals.same_shape(data.normal_maps[0]));
  for (size_t i = 0; i < normals.size(); ++i) {
    CHECK(std::abs(normals.data()[i] - data.normal_maps[0].data()[i]) < 1e-6);
  }

  const auto init = load_gaussian_ply((dir / "init.ply").string());
  REQUIRE(init.size() == world.initial_scene.size());
  for (size_t i = 0; i < init.size(); ++i) {
    CHECK((init[i].mean - world.initial_scene[i].mean).norm() < 1e-6);
  }

  std::ifstream times(dir / "times.txt");
  double t;
  int n_times = 0;
  while (times >> t) {
    CHECK(t == doctest::Approx(world.camera_times[n_times]).epsilon(1e-12));
    ++n_times;
  }
  CHECK(n_times == static_cast<int>(world.camera_times.size()));

  std::filesystem::remove_all(dir);
}
