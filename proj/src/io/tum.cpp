#include "msplat/io/tum.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace msplat::io {

namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
  throw std::runtime_error(path + ": line " + std::to_string(line) + ": " + what);
}

}  // namespace

Trajectory load_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open trajectory file: " + path);
  }

  Trajectory traj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;

    std::istringstream row(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(row >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      fail(path, line_no, "expected 8 fields: t tx ty tz qx qy qz qw");
    }
    std::string extra;
    if (row >> extra) {
      fail(path, line_no, "trailing content after 8 fields: '" + extra + "'");
    }
    if (!std::isfinite(t)) fail(path, line_no, "non-finite timestamp");
    if (!traj.samples.empty()) {
      const double prev = *traj.samples.back().timestamp;
      if (t == prev) fail(path, line_no, "duplicate timestamp");
      if (t < prev) fail(path, line_no, "timestamp decreases");
    }
    try {
      traj.samples.emplace_back(Rotation(qw, qx, qy, qz), Vec3(tx, ty, tz), t);
    } catch (const std::invalid_argument& e) {
      fail(path, line_no, e.what());
    }
  }
  if (traj.samples.empty()) {
    throw std::runtime_error(path + ": no pose rows");
  }
  return traj;
}

void save_tum(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write trajectory file: " + path);
  }
  char buf[512];
  for (const SE3Pose& p : traj.samples) {
    const Rotation& r = p.rotation;
    std::snprintf(buf, sizeof(buf),
                  "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  p.timestamp.value(), p.translation.x(), p.translation.y(),
                  p.translation.z(), r.x(), r.y(), r.z(), r.w());
    out << buf;
  }
  if (!out) {
    throw std::runtime_error("write failed: " + path);
  }
}

}  // namespace msplat::io
