#pragma once

#include <msplat/trajectory.hpp>

#include <string>

namespace msplat::io {

/// TUM trajectory text: one `timestamp tx ty tz qx qy qz qw` row per pose,
/// whitespace separated, `#` starts a comment line. Quaternions are
/// normalized on load. Throws std::runtime_error with the 1-based line
/// number for malformed rows, duplicate timestamps, or out-of-order rows.
Trajectory load_tum(const std::string& path);

/// Writes rows with round-trip-exact precision (%.17g).
void save_tum(const std::string& path, const Trajectory& traj);

}  // namespace msplat::io
