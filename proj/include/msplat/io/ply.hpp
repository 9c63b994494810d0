#pragma once

#include <string>
#include <vector>

#include "msplat/splat.hpp"

namespace msplat {

/// Scene snapshots as binary little-endian PLY, one vertex per primitive,
/// float32 properties in this order:
///   x y z                position (meters)
///   f_dc_0..2            degree-0 SH coefficient per channel (sh column 0)
///   f_rest_0..8          degree-1 SH, channel-major (sh(ch, k) at ch*3+k-1)
///   opacity              opacity logit
///   scale_0..2           log-scales
///   rot_0..3             quaternion w, x, y, z
/// load_gaussian_ply accepts extra properties and any property order; the
/// quaternion is renormalized on load. Throws std::runtime_error on malformed
/// files.
void save_gaussian_ply(const std::string& path,
                       const std::vector<GaussianPrimitive>& scene);
std::vector<GaussianPrimitive> load_gaussian_ply(const std::string& path);

}  // namespace msplat
