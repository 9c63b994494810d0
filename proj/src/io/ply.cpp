#include "msplat/io/ply.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace msplat {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error(path + ": " + what);
}

const std::array<const char*, 23> kProperties = {
    "x",        "y",        "z",        "f_dc_0",  "f_dc_1",  "f_dc_2",
    "f_rest_0", "f_rest_1", "f_rest_2", "f_rest_3", "f_rest_4", "f_rest_5",
    "f_rest_6", "f_rest_7", "f_rest_8", "opacity",  "scale_0",  "scale_1",
    "scale_2",  "rot_0",    "rot_1",    "rot_2",    "rot_3"};

static_assert(sizeof(float) == 4);

}  // namespace

void save_gaussian_ply(const std::string& path,
                       const std::vector<GaussianPrimitive>& scene) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << scene.size() << "\n";
  for (const char* name : kProperties) out << "property float " << name << "\n";
  out << "end_header\n";

  std::vector<float> row(kProperties.size());
  for (const auto& g : scene) {
    int i = 0;
    for (int k = 0; k < 3; ++k) row[i++] = static_cast<float>(g.mean(k));
    for (int ch = 0; ch < 3; ++ch) row[i++] = static_cast<float>(g.sh(ch, 0));
    for (int ch = 0; ch < 3; ++ch) {
      for (int k = 1; k < 4; ++k) row[i++] = static_cast<float>(g.sh(ch, k));
    }
    row[i++] = static_cast<float>(g.opacity_logit);
    for (int k = 0; k < 3; ++k) row[i++] = static_cast<float>(g.log_scale(k));
    row[i++] = static_cast<float>(g.orientation.w());
    row[i++] = static_cast<float>(g.orientation.x());
    row[i++] = static_cast<float>(g.orientation.y());
    row[i++] = static_cast<float>(g.orientation.z());
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) fail(path, "write failed");
}

std::vector<GaussianPrimitive> load_gaussian_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");

  std::string line;
  if (!std::getline(in, line) || line != "ply") fail(path, "not a PLY file");
  size_t count = 0;
  bool has_format = false, in_vertex = false;
  std::map<std::string, int> property_index;
  int n_properties = 0;
  for (;;) {
    if (!std::getline(in, line)) fail(path, "unterminated PLY header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "comment" || tag.empty()) continue;
    if (tag == "end_header") break;
    if (tag == "format") {
      std::string fmt, version;
      ls >> fmt >> version;
      if (fmt != "binary_little_endian") fail(path, "unsupported PLY format " + fmt);
      has_format = true;
    } else if (tag == "element") {
      std::string name;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (!in_vertex) fail(path, "unsupported PLY element " + name);
    } else if (tag == "property") {
      if (!in_vertex) fail(path, "property outside vertex element");
      std::string type, name;
      ls >> type >> name;
      if (type != "float" && type != "float32") {
        fail(path, "unsupported property type " + type);
      }
      property_index[name] = n_properties++;
    } else {
      fail(path, "unexpected PLY header line: " + line);
    }
  }
  if (!has_format) fail(path, "missing PLY format line");
  std::array<int, kProperties.size()> slot{};
  for (size_t k = 0; k < kProperties.size(); ++k) {
    const auto it = property_index.find(kProperties[k]);
    if (it == property_index.end()) {
      fail(path, std::string("missing property ") + kProperties[k]);
    }
    slot[k] = it->second;
  }

  std::vector<GaussianPrimitive> scene(count);
  std::vector<float> row(n_properties);
  for (size_t v = 0; v < count; ++v) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) fail(path, "truncated PLY data");
    auto value = [&](int k) -> double { return row[slot[k]]; };
    GaussianPrimitive& g = scene[v];
    g.mean = Vec3(value(0), value(1), value(2));
    for (int ch = 0; ch < 3; ++ch) {
      g.sh(ch, 0) = value(3 + ch);
      for (int k = 1; k < 4; ++k) g.sh(ch, k) = value(6 + ch * 3 + k - 1);
    }
    g.opacity_logit = value(15);
    g.log_scale = Vec3(value(16), value(17), value(18));
    try {
      g.orientation = Rotation(value(19), value(20), value(21), value(22));
    } catch (const std::invalid_argument& e) {
      fail(path, "vertex " + std::to_string(v) + ": " + e.what());
    }
  }
  return scene;
}

}  // namespace msplat
