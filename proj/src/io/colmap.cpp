#include "msplat/io/colmap.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace msplat {
namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

/// Yields non-comment, non-blank lines with their 1-based line numbers.
class LineReader {
 public:
  explicit LineReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw std::runtime_error("cannot open " + path);
  }

  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++line_number_;
      const size_t start = line.find_first_not_of(" \t\r");
      if (start == std::string::npos || line[start] == '#') continue;
      return true;
    }
    return false;
  }

  const std::string& path() const { return path_; }
  int line_number() const { return line_number_; }

 private:
  std::string path_;
  std::ifstream in_;
  int line_number_ = 0;
};

std::vector<ColmapCamera> load_cameras(const std::string& path) {
  LineReader reader(path);
  std::vector<ColmapCamera> cameras;
  std::string line;
  while (reader.next(line)) {
    std::istringstream row(line);
    ColmapCamera cam;
    std::string model;
    if (!(row >> cam.camera_id >> model >> cam.camera.width >>
          cam.camera.height)) {
      fail(path, reader.line_number(), "malformed camera row");
    }
    if (model != "PINHOLE") {
      fail(path, reader.line_number(), "unsupported camera model " + model);
    }
    if (!(row >> cam.camera.fx >> cam.camera.fy >> cam.camera.cx >>
          cam.camera.cy)) {
      fail(path, reader.line_number(), "PINHOLE needs fx fy cx cy");
    }
    cam.camera.validate();
    cameras.push_back(cam);
  }
  return cameras;
}

std::vector<ColmapImage> load_images(const std::string& path) {
  LineReader reader(path);
  std::vector<ColmapImage> images;
  std::string line;
  while (reader.next(line)) {
    std::istringstream row(line);
    ColmapImage img;
    double qw, qx, qy, qz;
    Vec3 t;
    if (!(row >> img.image_id >> qw >> qx >> qy >> qz >> t.x() >> t.y() >>
          t.z() >> img.camera_id >> img.name)) {
      fail(path, reader.line_number(), "malformed image row");
    }
    img.camera_from_world =
        SE3Pose(Rotation(Eigen::Quaterniond(qw, qx, qy, qz)), t);

    // The companion row lists X Y POINT3D_ID triples; it may be empty.
    std::string points_line;
    if (!reader.next(points_line)) {
      fail(path, reader.line_number(), "missing points2D row for image " +
                                           std::to_string(img.image_id));
    }
    std::istringstream points(points_line);
    double x, y;
    long long id;
    while (points >> x >> y >> id) {
      img.points2d.push_back(Vec2(x, y));
      img.point3d_ids.push_back(id);
    }
    if (!points.eof()) {
      fail(path, reader.line_number(), "malformed points2D row");
    }
    images.push_back(std::move(img));
  }
  return images;
}

std::vector<ColmapPoint> load_points(const std::string& path) {
  LineReader reader(path);
  std::vector<ColmapPoint> points;
  std::string line;
  while (reader.next(line)) {
    std::istringstream row(line);
    ColmapPoint p;
    if (!(row >> p.point3d_id >> p.xyz.x() >> p.xyz.y() >> p.xyz.z() >>
          p.rgb(0) >> p.rgb(1) >> p.rgb(2) >> p.error)) {
      fail(path, reader.line_number(), "malformed point3D row");
    }
    int image_id, point2d_idx;
    while (row >> image_id >> point2d_idx) {
      p.track.emplace_back(image_id, point2d_idx);
    }
    if (!row.eof()) fail(path, reader.line_number(), "malformed track");
    points.push_back(std::move(p));
  }
  return points;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ColmapModel load_colmap_model(const std::string& dir) {
  const std::filesystem::path base(dir);
  ColmapModel model;
  model.cameras = load_cameras((base / "cameras.txt").string());
  model.images = load_images((base / "images.txt").string());
  model.points = load_points((base / "points3D.txt").string());
  return model;
}

void save_colmap_model(const std::string& dir, const ColmapModel& model) {
  const std::filesystem::path base(dir);
  std::filesystem::create_directories(base);

  {
    std::ofstream out(base / "cameras.txt");
    if (!out) throw std::runtime_error("cannot write " + dir + "/cameras.txt");
    out << "# Camera list: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n";
    for (const ColmapCamera& cam : model.cameras) {
      out << cam.camera_id << " PINHOLE " << cam.camera.width << " "
          << cam.camera.height << " " << fmt(cam.camera.fx) << " "
          << fmt(cam.camera.fy) << " " << fmt(cam.camera.cx) << " "
          << fmt(cam.camera.cy) << "\n";
    }
  }
  {
    std::ofstream out(base / "images.txt");
    if (!out) throw std::runtime_error("cannot write " + dir + "/images.txt");
    out << "# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n";
    out << "#   followed by: POINTS2D[] as (X Y POINT3D_ID)\n";
    for (const ColmapImage& img : model.images) {
      const Eigen::Quaterniond q = img.camera_from_world.rotation.quat();
      const Vec3& t = img.camera_from_world.translation;
      out << img.image_id << " " << fmt(q.w()) << " " << fmt(q.x()) << " "
          << fmt(q.y()) << " " << fmt(q.z()) << " " << fmt(t.x()) << " "
          << fmt(t.y()) << " " << fmt(t.z()) << " " << img.camera_id << " "
          << img.name << "\n";
      for (size_t k = 0; k < img.points2d.size(); ++k) {
        out << (k ? " " : "") << fmt(img.points2d[k].x()) << " "
            << fmt(img.points2d[k].y()) << " " << img.point3d_ids[k];
      }
      out << "\n";
    }
  }
  {
    std::ofstream out(base / "points3D.txt");
    if (!out) throw std::runtime_error("cannot write " + dir + "/points3D.txt");
    out << "# 3D point list: POINT3D_ID X Y Z R G B ERROR TRACK[] as "
           "(IMAGE_ID POINT2D_IDX)\n";
    for (const ColmapPoint& p : model.points) {
      out << p.point3d_id << " " << fmt(p.xyz.x()) << " " << fmt(p.xyz.y())
          << " " << fmt(p.xyz.z()) << " " << p.rgb(0) << " " << p.rgb(1) << " "
          << p.rgb(2) << " " << fmt(p.error);
      for (const auto& [image_id, idx] : p.track) {
        out << " " << image_id << " " << idx;
      }
      out << "\n";
    }
  }
}

}  // namespace msplat
