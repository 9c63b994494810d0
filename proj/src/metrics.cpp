#include "msplat/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace msplat {

SE3Pose align_rigid(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  if (from.size() != to.size()) {
    throw std::invalid_argument("alignment needs equally many points on both sides");
  }
  if (from.size() < 3) {
    throw std::invalid_argument("alignment needs at least 3 point pairs");
  }
  Eigen::Matrix3Xd src(3, from.size()), dst(3, to.size());
  for (size_t i = 0; i < from.size(); ++i) {
    src.col(i) = from[i];
    dst.col(i) = to[i];
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, /*with_scaling=*/false);
  return SE3Pose(Rotation(Mat3(t.topLeftCorner<3, 3>())),
                 Vec3(t.topRightCorner<3, 1>()));
}

double ate_rmse(const std::vector<SE3Pose>& estimate,
                const std::vector<SE3Pose>& reference, bool align) {
  if (estimate.size() != reference.size()) {
    throw std::invalid_argument("trajectories must have equal length");
  }
  if (estimate.empty()) {
    throw std::invalid_argument("trajectories are empty");
  }
  std::vector<Vec3> est, ref;
  est.reserve(estimate.size());
  ref.reserve(reference.size());
  for (const SE3Pose& p : estimate) est.push_back(p.translation);
  for (const SE3Pose& p : reference) ref.push_back(p.translation);

  SE3Pose transform;
  if (align) transform = align_rigid(est, ref);

  double sum_sq = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    sum_sq += (transform * est[i] - ref[i]).squaredNorm();
  }
  return std::sqrt(sum_sq / est.size());
}

}  // namespace msplat
