#pragma once

#include <msplat/lie.hpp>

#include <vector>

namespace msplat {

/// Least-squares rigid transform (rotation + translation, no scale)
/// minimizing sum ||T * from_i - to_i||^2. Throws std::invalid_argument on
/// size mismatch or fewer than 3 point pairs.
SE3Pose align_rigid(const std::vector<Vec3>& from, const std::vector<Vec3>& to);

/// Root-mean-square translation error between index-paired poses. With
/// align=true a rigid transform fitted on the translations is applied to the
/// estimate first, removing the global gauge the way trajectory benchmarks
/// evaluate absolute error.
double ate_rmse(const std::vector<SE3Pose>& estimate,
                const std::vector<SE3Pose>& reference, bool align);

}  // namespace msplat
