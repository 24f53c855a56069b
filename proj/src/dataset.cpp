#include "gsloc/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gsloc/image_io.hpp"

namespace fs = std::filesystem;

namespace gsloc {

namespace {

std::string frame_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.png", i);
  return buf;
}

std::vector<std::string> list_pngs(const fs::path& dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) return names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

void save_intrinsics(const std::string& path, const PinholeIntrinsics& K) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write intrinsics: " + path);
  out.precision(12);
  out << K.fx << " " << K.fy << " " << K.cx << " " << K.cy << " " << K.width
      << " " << K.height << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

PinholeIntrinsics load_intrinsics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open intrinsics: " + path);
  PinholeIntrinsics K;
  if (!(in >> K.fx >> K.fy >> K.cx >> K.cy >> K.width >> K.height))
    throw std::runtime_error("malformed intrinsics file: " + path);
  return K;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "depth");
  for (size_t i = 0; i < ds.views.size(); ++i) {
    save_png8((fs::path(dir) / "images" / frame_name(i)).string(),
              ds.views[i].image);
    save_depth_png16((fs::path(dir) / "depth" / frame_name(i)).string(),
                     ds.views[i].depth);
  }
  save_trajectory((fs::path(dir) / "trajectory.txt").string(), ds.trajectory());
  save_intrinsics((fs::path(dir) / "intrinsics.txt").string(), ds.intrinsics);
}

std::string ValidationReport::to_string() const {
  if (issues.empty()) return "dataset valid";
  std::ostringstream os;
  os << "dataset validation failed (" << issues.size() << " issue"
     << (issues.size() == 1 ? "" : "s") << "):";
  for (const auto& it : issues) os << "\n  " << it.file << ": " << it.message;
  return os.str();
}

ValidationReport validate_dataset(const std::string& dir) {
  ValidationReport rep;
  auto issue = [&](const std::string& file, const std::string& msg) {
    rep.issues.push_back({file, msg});
  };

  if (!fs::is_directory(dir)) {
    issue(dir, "not a directory");
    return rep;
  }

  PinholeIntrinsics K;
  const std::string kpath = (fs::path(dir) / "intrinsics.txt").string();
  try {
    K = load_intrinsics(kpath);
    if (!K.valid()) issue("intrinsics.txt", "intrinsics out of range");
  } catch (const std::exception& e) {
    issue("intrinsics.txt", e.what());
  }

  std::vector<TimedPose> traj;
  try {
    traj = load_trajectory((fs::path(dir) / "trajectory.txt").string());
    if (traj.empty()) issue("trajectory.txt", "no poses");
  } catch (const std::exception& e) {
    issue("trajectory.txt", e.what());
  }

  const auto images = list_pngs(fs::path(dir) / "images");
  const auto depths = list_pngs(fs::path(dir) / "depth");
  if (!traj.empty() && images.size() != traj.size())
    issue("images/", std::to_string(images.size()) + " images but " +
                         std::to_string(traj.size()) + " trajectory poses");
  if (!traj.empty() && depths.size() != traj.size())
    issue("depth/", std::to_string(depths.size()) + " depth images but " +
                        std::to_string(traj.size()) + " trajectory poses");
  if (images.empty()) issue("images/", "no PNG files");

  for (const auto& name : images) {
    try {
      const Image img = load_png8((fs::path(dir) / "images" / name).string());
      if (K.valid() && (img.width != K.width || img.height != K.height))
        issue("images/" + name, "size " + std::to_string(img.width) + "x" +
                                    std::to_string(img.height) +
                                    " does not match intrinsics");
    } catch (const std::exception& e) {
      issue("images/" + name, e.what());
    }
  }
  for (const auto& name : depths) {
    try {
      const Image d = load_depth_png16((fs::path(dir) / "depth" / name).string());
      if (K.valid() && (d.width != K.width || d.height != K.height))
        issue("depth/" + name, "size does not match intrinsics");
    } catch (const std::exception& e) {
      issue("depth/" + name, e.what());
    }
  }
  return rep;
}

Dataset ingest_dataset(const std::string& dir) {
  ValidationReport rep = validate_dataset(dir);
  if (!rep.ok()) throw DatasetInvalid(std::move(rep));

  Dataset ds;
  ds.intrinsics = load_intrinsics((fs::path(dir) / "intrinsics.txt").string());
  const auto traj = load_trajectory((fs::path(dir) / "trajectory.txt").string());
  const auto images = list_pngs(fs::path(dir) / "images");
  const auto depths = list_pngs(fs::path(dir) / "depth");

  ds.views.resize(traj.size());
  ds.timestamps.resize(traj.size());
  for (size_t i = 0; i < traj.size(); ++i) {
    ds.views[i].image = load_png8((fs::path(dir) / "images" / images[i]).string());
    ds.views[i].depth =
        load_depth_png16((fs::path(dir) / "depth" / depths[i]).string());
    ds.views[i].pose = traj[i].pose;
    ds.views[i].intrinsics = ds.intrinsics;
    ds.timestamps[i] = traj[i].timestamp;
  }
  return ds;
}

void save_reference_set(const std::string& dir, const ReferenceSet& set) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "depth");
  std::ofstream out(fs::path(dir) / "manifest.txt");
  if (!out) throw std::runtime_error("cannot write reference manifest in " + dir);
  out.precision(12);
  out << "# index ts tx ty tz qx qy qz qw provenance source_kf alpha_coverage\n";
  if (!set.views.empty()) {
    save_intrinsics((fs::path(dir) / "intrinsics.txt").string(),
                    set.views.front().intrinsics);
  }
  for (size_t i = 0; i < set.views.size(); ++i) {
    const ReferenceView& v = set.views[i];
    save_png8((fs::path(dir) / "images" / frame_name(i)).string(), v.image);
    save_depth_png16((fs::path(dir) / "depth" / frame_name(i)).string(), v.depth);
    const Quat& q = v.pose.rotation;
    const Vec3& t = v.pose.translation;
    out << i << " " << double(i) << " " << t.x() << " " << t.y() << " " << t.z()
        << " " << q.x() << " " << q.y() << " " << q.z() << " " << q.w() << " "
        << (v.provenance == Provenance::kKeyframe ? "keyframe" : "rendered")
        << " " << v.source_keyframe_index << " " << v.alpha_coverage << "\n";
  }
  out << "# dropped_low_coverage " << set.dropped_low_coverage << "\n";
  if (!out) throw std::runtime_error("write failed: reference manifest in " + dir);
}

ReferenceSet load_reference_set(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.txt");
  if (!in) throw std::runtime_error("cannot open reference manifest in " + dir);
  const PinholeIntrinsics K =
      load_intrinsics((fs::path(dir) / "intrinsics.txt").string());

  ReferenceSet set;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream cs(line.substr(1));
      std::string key;
      if (cs >> key && key == "dropped_low_coverage") cs >> set.dropped_low_coverage;
      continue;
    }
    std::istringstream ls(line);
    size_t idx;
    double ts, tx, ty, tz, qx, qy, qz, qw, coverage;
    std::string prov;
    int source_kf;
    if (!(ls >> idx >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw >> prov >>
          source_kf >> coverage))
      throw std::runtime_error("malformed reference manifest line: " + line);
    ReferenceView v;
    v.image = load_png8((fs::path(dir) / "images" / frame_name(idx)).string());
    v.depth = load_depth_png16((fs::path(dir) / "depth" / frame_name(idx)).string());
    v.pose = CameraPose(Quat(qw, qx, qy, qz), Vec3(tx, ty, tz));
    v.intrinsics = K;
    v.provenance =
        prov == "keyframe" ? Provenance::kKeyframe : Provenance::kRendered;
    v.source_keyframe_index = source_kf;
    v.alpha_coverage = coverage;
    set.views.push_back(std::move(v));
  }
  return set;
}

}  // namespace gsloc
