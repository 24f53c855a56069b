#include "gsloc/gaussian_map.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace gsloc {

Mat3 covariance_3d(const GaussianPrimitive& g) {
  const Mat3 R = g.rotation.normalized().toRotationMatrix();
  const Vec3 s2 = (2.0 * g.log_scale).array().exp();
  Mat3 cov = R * s2.asDiagonal() * R.transpose();
  return 0.5 * (cov + cov.transpose());  // exact symmetry
}

GaussianMap prune(const GaussianMap& map, double min_opacity) {
  GaussianMap out;
  out.background_color = map.background_color;
  out.metadata = map.metadata;
  out.primitives.reserve(map.primitives.size());
  for (const auto& g : map.primitives)
    if (g.opacity() >= min_opacity) out.primitives.push_back(g);
  return out;
}

namespace {

constexpr int kMapFormatVersion = 1;
constexpr int kFloatsPerVertex = 14;

const char* kPropertyNames[kFloatsPerVertex] = {
    "x", "y", "z", "rot_w", "rot_x", "rot_y", "rot_z",
    "log_scale_x", "log_scale_y", "log_scale_z", "opacity_logit",
    "red", "green", "blue"};

void vertex_floats(const GaussianPrimitive& g, float* out) {
  out[0] = float(g.position.x());
  out[1] = float(g.position.y());
  out[2] = float(g.position.z());
  out[3] = float(g.rotation.w());
  out[4] = float(g.rotation.x());
  out[5] = float(g.rotation.y());
  out[6] = float(g.rotation.z());
  out[7] = float(g.log_scale.x());
  out[8] = float(g.log_scale.y());
  out[9] = float(g.log_scale.z());
  out[10] = float(g.opacity_logit);
  out[11] = float(g.color.x());
  out[12] = float(g.color.y());
  out[13] = float(g.color.z());
}

GaussianPrimitive from_floats(const float* v) {
  GaussianPrimitive g;
  g.position = Vec3(v[0], v[1], v[2]);
  g.rotation = Quat(v[3], v[4], v[5], v[6]);
  g.log_scale = Vec3(v[7], v[8], v[9]);
  g.opacity_logit = v[10];
  g.color = Vec3(v[11], v[12], v[13]);
  return g;
}

}  // namespace

void save_map(const GaussianMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write map file: " + path);
  char bg[128];
  std::snprintf(bg, sizeof(bg), "%.9g %.9g %.9g", map.background_color.x(),
                map.background_color.y(), map.background_color.z());
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "comment gsloc_map_version " << kMapFormatVersion << "\n";
  out << "comment background " << bg << "\n";
  out << "comment seed " << map.metadata.seed << "\n";
  out << "comment source " << (map.metadata.source_dataset.empty() ? "-" : map.metadata.source_dataset) << "\n";
  out << "comment config " << (map.metadata.config_tag.empty() ? "-" : map.metadata.config_tag) << "\n";
  out << "element vertex " << map.primitives.size() << "\n";
  for (const char* name : kPropertyNames) out << "property float " << name << "\n";
  out << "end_header\n";
  std::vector<float> buf(kFloatsPerVertex);
  for (const auto& g : map.primitives) {
    vertex_floats(g, buf.data());
    out.write(reinterpret_cast<const char*>(buf.data()),
              kFloatsPerVertex * sizeof(float));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

GaussianMap load_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open map file: " + path);

  GaussianMap map;
  size_t vertex_count = 0;
  bool saw_version = false;
  int prop_index = 0;
  std::string line;
  while (true) {
    if (!std::getline(in, line))
      throw FormatError("unexpected end of PLY header in " + path, in.tellg());
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "ply" || tok == "format") {
      if (tok == "format") {
        std::string fmt;
        ss >> fmt;
        if (fmt != "binary_little_endian")
          throw FormatError("unsupported PLY format '" + fmt + "' in " + path);
      }
    } else if (tok == "comment") {
      std::string key;
      ss >> key;
      if (key == "gsloc_map_version") {
        int v = -1;
        ss >> v;
        if (v != kMapFormatVersion)
          throw VersionError("unknown map format version " + std::to_string(v) +
                             " in " + path);
        saw_version = true;
      } else if (key == "background") {
        ss >> map.background_color.x() >> map.background_color.y() >>
            map.background_color.z();
      } else if (key == "seed") {
        ss >> map.metadata.seed;
      } else if (key == "source") {
        std::string s;
        ss >> s;
        if (s != "-") map.metadata.source_dataset = s;
      } else if (key == "config") {
        std::string s;
        ss >> s;
        if (s != "-") map.metadata.config_tag = s;
      }
    } else if (tok == "element") {
      std::string what;
      ss >> what >> vertex_count;
      if (what != "vertex")
        throw FormatError("unexpected PLY element '" + what + "' in " + path);
    } else if (tok == "property") {
      std::string type, name;
      ss >> type >> name;
      if (prop_index >= kFloatsPerVertex || type != "float" ||
          name != kPropertyNames[prop_index])
        throw FormatError("unexpected PLY property '" + name + "' in " + path);
      ++prop_index;
    } else if (tok == "end_header") {
      break;
    } else {
      throw FormatError("unexpected PLY header token '" + tok + "' in " + path);
    }
  }
  if (!saw_version) throw VersionError("missing map version comment in " + path);
  if (prop_index != kFloatsPerVertex)
    throw FormatError("wrong property count in " + path);

  map.primitives.reserve(vertex_count);
  std::vector<float> buf(kFloatsPerVertex);
  for (size_t i = 0; i < vertex_count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), kFloatsPerVertex * sizeof(float));
    if (!in)
      throw FormatError("truncated map file " + path + " at primitive " +
                            std::to_string(i),
                        in.tellg());
    map.primitives.push_back(from_floats(buf.data()));
  }
  return map;
}

}  // namespace gsloc
