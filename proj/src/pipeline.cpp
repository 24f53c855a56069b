#include "gsloc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "gsloc/image_io.hpp"

namespace fs = std::filesystem;

namespace gsloc {

uint64_t fnv1a64(const std::string& s, uint64_t h) {
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("boolean value expected for " + key + ", got '" + v + "'");
}

double parse_double(const std::string& v, const std::string& key) {
  size_t pos = 0;
  double d;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("numeric value expected for " + key + ", got '" + v + "'");
  }
  if (pos != v.size())
    throw ConfigError("trailing characters in numeric value for " + key);
  return d;
}

int parse_int(const std::string& v, const std::string& key) {
  const double d = parse_double(v, key);
  if (d != std::floor(d))
    throw ConfigError("integer value expected for " + key + ", got '" + v + "'");
  return int(d);
}

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

ThresholdSpec parse_thresholds(const std::string& v) {
  // "0.5:0.02,1.5:0.05,..."
  ThresholdSpec spec;
  spec.pairs.clear();
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("threshold entry 'deg:m' expected, got '" + item + "'");
    spec.pairs.emplace_back(parse_double(trim(item.substr(0, colon)), "eval.thresholds"),
                            parse_double(trim(item.substr(colon + 1)), "eval.thresholds"));
  }
  if (!spec.valid())
    throw ConfigError("eval.thresholds must be strictly increasing in both components");
  return spec;
}

std::string thresholds_text(const ThresholdSpec& spec) {
  std::string out;
  for (const auto& [deg, m] : spec.pairs) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%g:%g", out.empty() ? "" : ",", deg, m);
    out += buf;
  }
  return out;
}

}  // namespace

PipelineConfig parse_pipeline_config_text(const std::string& text) {
  PipelineConfig cfg;
  using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"dataset.source", [](PipelineConfig& c, const std::string& v, const std::string&) { c.source = v; }},
      {"dataset.width", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.width = parse_int(v, k); }},
      {"dataset.height", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.height = parse_int(v, k); }},
      {"dataset.fov_deg", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.fov_deg = parse_double(v, k); }},
      {"dataset.train_count", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.train_count = parse_int(v, k); }},
      {"dataset.holdout_count", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.holdout_count = parse_int(v, k); }},
      {"dataset.query_count", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.query_count = parse_int(v, k); }},
      {"dataset.supersample", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.supersample = parse_int(v, k); }},
      {"dataset.exposure_perturbation", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.exposure_perturbation = parse_bool(v, k); }},
      {"dataset.psf_variance", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.psf_variance = parse_double(v, k); }},
      {"dataset.query_lateral_offset", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.query_lateral_offset = parse_double(v, k); }},
      {"dataset.query_reverse", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.query_reverse = parse_bool(v, k); }},
      {"optimize.iterations", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.iterations = parse_int(v, k); }},
      {"optimize.init_position_noise", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.init_position_noise = parse_double(v, k); }},
      {"optimize.init_color_noise", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.init_color_noise = parse_double(v, k); }},
      {"optimize.lambda_depth", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.lambda_depth = parse_double(v, k); }},
      {"augment.samples", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.sampling.samples_per_keyframe = parse_int(v, k); }},
      {"augment.long", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.sampling.longitudinal_range = parse_double(v, k); }},
      {"augment.lat", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.sampling.lateral_range = parse_double(v, k); }},
      {"augment.yaw", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.sampling.yaw_range_deg = parse_double(v, k); }},
      {"augment.vertical", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.sampling.vertical_range = parse_double(v, k); }},
      {"augment.min_coverage", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.min_coverage = parse_double(v, k); }},
      {"augment.keyframe_stride", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.keyframe_stride = parse_int(v, k); }},
      {"hgvl.top_k", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.hgvl.top_k = parse_int(v, k); }},
      {"hgvl.max_features", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.hgvl.max_features = parse_int(v, k); }},
      {"hgvl.match_ratio", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.hgvl.match_ratio = parse_double(v, k); }},
      {"hgvl.ransac_threshold_px", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.hgvl.ransac_threshold_px = parse_double(v, k); }},
      {"hgvl.ransac_iters", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.hgvl.ransac_iters = parse_int(v, k); }},
      {"scr.samples_per_view", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.scr.samples_per_view = parse_int(v, k); }},
      {"scr.trees", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.scr.num_trees = parse_int(v, k); }},
      {"scr.depth", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.scr.max_depth = parse_int(v, k); }},
      {"scr.candidates", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.scr.candidate_splits = parse_int(v, k); }},
      {"scr.stride", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.scr.predict_stride = parse_int(v, k); }},
      {"scr.augment", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.scr.augment = parse_bool(v, k); }},
      {"scr.ransac_iters", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.scr.ransac_iters = parse_int(v, k); }},
      {"eval.thresholds", [](PipelineConfig& c, const std::string& v, const std::string&) { c.thresholds = parse_thresholds(v); }},
      {"run.seed", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.seed = uint64_t(parse_int(v, k)); }},
      {"run.threads", [](PipelineConfig& c, const std::string& v, const std::string& k) { c.threads = parse_int(v, k); }},
      {"run.out", [](PipelineConfig& c, const std::string& v, const std::string&) { c.out_dir = v; }},
  };

  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(cfg, value, key);
  }
  return cfg;
}

PipelineConfig parse_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pipeline_config_text(ss.str());
}

std::string pipeline_config_text(const PipelineConfig& c) {
  std::ostringstream o;
  o.precision(12);
  const auto b = [](bool v) { return v ? "on" : "off"; };
  o << "[dataset]\n"
    << "source = " << c.source << "\n"
    << "width = " << c.width << "\n"
    << "height = " << c.height << "\n"
    << "fov_deg = " << c.fov_deg << "\n"
    << "train_count = " << c.train_count << "\n"
    << "holdout_count = " << c.holdout_count << "\n"
    << "query_count = " << c.query_count << "\n"
    << "supersample = " << c.supersample << "\n"
    << "exposure_perturbation = " << b(c.exposure_perturbation) << "\n"
    << "psf_variance = " << c.psf_variance << "\n"
    << "query_lateral_offset = " << c.query_lateral_offset << "\n"
    << "query_reverse = " << b(c.query_reverse) << "\n\n"
    << "[optimize]\n"
    << "iterations = " << c.iterations << "\n"
    << "init_position_noise = " << c.init_position_noise << "\n"
    << "init_color_noise = " << c.init_color_noise << "\n"
    << "lambda_depth = " << c.lambda_depth << "\n\n"
    << "[augment]\n"
    << "samples = " << c.sampling.samples_per_keyframe << "\n"
    << "long = " << c.sampling.longitudinal_range << "\n"
    << "lat = " << c.sampling.lateral_range << "\n"
    << "yaw = " << c.sampling.yaw_range_deg << "\n"
    << "vertical = " << c.sampling.vertical_range << "\n"
    << "min_coverage = " << c.min_coverage << "\n"
    << "keyframe_stride = " << c.keyframe_stride << "\n\n"
    << "[hgvl]\n"
    << "top_k = " << c.hgvl.top_k << "\n"
    << "max_features = " << c.hgvl.max_features << "\n"
    << "match_ratio = " << c.hgvl.match_ratio << "\n"
    << "ransac_threshold_px = " << c.hgvl.ransac_threshold_px << "\n"
    << "ransac_iters = " << c.hgvl.ransac_iters << "\n\n"
    << "[scr]\n"
    << "samples_per_view = " << c.scr.samples_per_view << "\n"
    << "trees = " << c.scr.num_trees << "\n"
    << "depth = " << c.scr.max_depth << "\n"
    << "candidates = " << c.scr.candidate_splits << "\n"
    << "stride = " << c.scr.predict_stride << "\n"
    << "augment = " << b(c.scr.augment) << "\n"
    << "ransac_iters = " << c.scr.ransac_iters << "\n\n"
    << "[eval]\n"
    << "thresholds = " << thresholds_text(c.thresholds) << "\n\n"
    << "[run]\n"
    << "seed = " << c.seed << "\n"
    << "threads = " << c.threads << "\n"
    << "out = " << c.out_dir << "\n";
  return o.str();
}

void save_results_csv(const std::string& path,
                      const std::vector<QueryResult>& results) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write results: " + path);
  out << "query,status,tx,ty,tz,qw,qx,qy,qz,inliers,elapsed_ms\n";
  out.precision(12);
  for (const auto& r : results) {
    const Vec3& t = r.loc.pose.translation;
    const Quat& q = r.loc.pose.rotation;
    out << r.query << "," << to_string(r.loc.status) << "," << t.x() << ","
        << t.y() << "," << t.z() << "," << q.w() << "," << q.x() << ","
        << q.y() << "," << q.z() << "," << r.loc.inlier_count << ","
        << r.loc.elapsed_ms << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<QueryResult> load_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results: " + path);
  std::vector<QueryResult> results;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    QueryResult r;
    std::string status;
    double tx, ty, tz, qw, qx, qy, qz, elapsed;
    if (!(ls >> r.query >> status >> tx >> ty >> tz >> qw >> qx >> qy >> qz >>
          r.loc.inlier_count >> elapsed))
      throw std::runtime_error("malformed results line in " + path + ": " + line);
    r.loc.status = loc_status_from_string(status);
    r.loc.pose = CameraPose(Quat(qw, qx, qy, qz), Vec3(tx, ty, tz));
    r.loc.elapsed_ms = elapsed;
    results.push_back(r);
  }
  return results;
}

void save_losses_csv(const std::string& path,
                     const std::vector<LossRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write losses: " + path);
  out << "iter,photometric,depth,total\n";
  out.precision(12);
  for (const auto& r : history)
    out << r.iter << "," << r.photometric << "," << r.depth << "," << r.total << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

GaussianMap init_map_from_rgbd(const std::vector<TrainView>& views, int stride,
                               uint64_t seed) {
  GaussianMap map;
  map.metadata.seed = seed;
  map.metadata.source_dataset = "rgbd-init";
  stride = std::max(1, stride);
  for (const auto& view : views) {
    for (int y = stride / 2; y < view.depth.height; y += stride)
      for (int x = stride / 2; x < view.depth.width; x += stride) {
        const double z = view.depth.at(x, y);
        if (z <= 0) continue;
        GaussianPrimitive g;
        g.position = view.pose.apply(
            back_project(x + 0.5, y + 0.5, z, view.intrinsics));
        // Footprint roughly matching the pixel spacing at this depth.
        const double sigma =
            std::max(1e-3, 0.7 * stride * z / view.intrinsics.fx);
        g.log_scale = Vec3::Constant(std::log(sigma));
        g.opacity_logit = logit(0.8);
        for (int c = 0; c < 3; ++c)
          g.color[c] = std::clamp(view.image.at(x, y, c), 0.0, 1.0);
        map.primitives.push_back(g);
      }
  }
  return map;
}

namespace {

struct StageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StageCache {
  fs::path dir;

  fs::path hash_path(const std::string& name) const { return dir / (name + ".hash"); }

  bool fresh(const std::string& name, uint64_t hash,
             const std::vector<fs::path>& outputs) const {
    std::ifstream in(hash_path(name));
    std::string stored;
    if (!(in >> stored)) return false;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)hash);
    if (stored != buf) return false;
    for (const auto& p : outputs)
      if (!fs::exists(p)) return false;
    return true;
  }

  void record(const std::string& name, uint64_t hash) const {
    std::ofstream out(hash_path(name));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)hash);
    out << buf << "\n";
  }
};

std::string section_text(const PipelineConfig& cfg, const std::string& name) {
  // Slice of the canonical config text belonging to one [section].
  const std::string all = pipeline_config_text(cfg);
  const std::string header = "[" + name + "]";
  const size_t start = all.find(header);
  if (start == std::string::npos) return "";
  const size_t end = all.find("\n[", start);
  return all.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

PinholeIntrinsics intrinsics_from_fov(int width, int height, double fov_deg) {
  PinholeIntrinsics K;
  K.width = width;
  K.height = height;
  K.fx = K.fy = 0.5 * width / std::tan(0.5 * fov_deg * M_PI / 180.0);
  K.cx = 0.5 * width;
  K.cy = 0.5 * height;
  return K;
}

const std::vector<Vec2> kMappingWaypoints = {
    {1.5, 3.4}, {5.0, 3.4}, {7.0, 4.6}, {10.5, 4.6}};

double polyline_length(const std::vector<Vec2>& wps) {
  double L = 0;
  for (size_t i = 1; i < wps.size(); ++i) L += (wps[i] - wps[i - 1]).norm();
  return L;
}

// Frame rate that yields exactly n poses along the polyline at 1 m/s.
double frame_rate_for(const std::vector<Vec2>& wps, int n) {
  return double(std::max(1, n - 1)) / polyline_length(wps);
}

struct Paths {
  fs::path out, stages, dataset, mapping, holdout, query, maps, refs, loc, report;
  fs::path map_gt;

  explicit Paths(const PipelineConfig& cfg) {
    out = cfg.out_dir;
    stages = out / ".stages";
    dataset = out / "dataset";
    if (cfg.source == "synthetic") {
      mapping = dataset / "mapping";
      holdout = dataset / "holdout";
      query = dataset / "query";
    } else {
      mapping = fs::path(cfg.source) / "mapping";
      holdout = fs::path(cfg.source) / "holdout";
      query = fs::path(cfg.source) / "query";
    }
    maps = out / "maps";
    refs = out / "refs";
    loc = out / "loc";
    report = out / "report";
    map_gt = dataset / "map_gt.ply";
  }

  fs::path map_ply(char tag) const { return maps / (std::string("map_") + tag + ".ply"); }
  fs::path losses(char tag) const { return maps / (std::string("losses_") + tag + ".csv"); }
  fs::path results(const std::string& m) const { return loc / (m + ".csv"); }
  fs::path forest(const std::string& v) const { return loc / ("forest_" + v + ".bin"); }
};

class PipelineRunner {
 public:
  PipelineRunner(const PipelineConfig& cfg, std::ostream& log)
      : cfg_(cfg), log_(log), paths_(cfg), cache_{Paths(cfg).stages} {}

  int run() {
    fs::create_directories(paths_.stages);
    fs::create_directories(paths_.maps);
    fs::create_directories(paths_.loc);

    const uint64_t h_dataset =
        fnv1a64(section_text(cfg_, "dataset") + "seed=" + std::to_string(cfg_.seed));
    stage("synth", h_dataset, synth_outputs(), [&] { stage_synth(); });

    std::map<char, uint64_t> h_opt;
    for (const char tag : {'a', 'b', 'c'}) {
      const uint64_t h = fnv1a64(section_text(cfg_, "optimize") + tag +
                                     "seed=" + std::to_string(cfg_.seed),
                                 h_dataset);
      h_opt[tag] = h;
      stage(std::string("optimize_") + tag, h,
            {paths_.map_ply(tag), paths_.losses(tag)},
            [&, tag] { stage_optimize(tag); });
    }

    const uint64_t h_aug = fnv1a64(section_text(cfg_, "augment"), h_opt['c']);
    stage("augment", h_aug, {paths_.refs / "manifest.txt"},
          [&] { stage_augment(); });

    std::map<std::string, uint64_t> h_loc;
    for (const std::string var : {"kf", "aug"}) {
      const uint64_t hh = fnv1a64(section_text(cfg_, "hgvl") + var, h_aug);
      h_loc["hgvl_" + var] = hh;
      stage("loc_hgvl_" + var, hh, {paths_.results("hgvl_" + var)},
            [&, var] { stage_hgvl(var); });

      const uint64_t ht = fnv1a64(section_text(cfg_, "scr") + var, h_aug);
      stage("scr_train_" + var, ht, {paths_.forest(var)},
            [&, var] { stage_scr_train(var); });
      const uint64_t hs = fnv1a64("loc", ht);
      h_loc["scr_" + var] = hs;
      stage("loc_scr_" + var, hs, {paths_.results("scr_" + var)},
            [&, var] { stage_loc_scr(var); });
    }

    uint64_t h_eval = fnv1a64(section_text(cfg_, "eval"), h_dataset);
    for (const char tag : {'a', 'b', 'c'}) h_eval = fnv1a64("o", h_eval ^ h_opt[tag]);
    for (const auto& [name, h] : h_loc) h_eval = fnv1a64(name, h_eval ^ h);
    stage("eval", h_eval,
          {paths_.report / "recall.csv", paths_.report / "ate.csv",
           paths_.report / "psnr.csv", paths_.report / "pose_errors.svg"},
          [&] { stage_eval(); });

    return failed_ ? 2 : 0;
  }

 private:
  void stage(const std::string& name, uint64_t hash,
             const std::vector<fs::path>& outputs,
             const std::function<void()>& fn) {
    if (failed_) return;
    if (cache_.fresh(name, hash, outputs)) {
      log_ << "[" << name << "] cached\n";
      return;
    }
    log_ << "[" << name << "] running...\n";
    try {
      fn();
      cache_.record(name, hash);
      log_ << "[" << name << "] done\n";
    } catch (const std::exception& e) {
      log_ << "[" << name << "] FAILED: " << e.what() << "\n";
      failed_ = true;
    }
  }

  std::vector<fs::path> synth_outputs() const {
    if (cfg_.source != "synthetic") return {};  // ingested, nothing produced
    return {paths_.mapping / "trajectory.txt", paths_.holdout / "trajectory.txt",
            paths_.query / "trajectory.txt", paths_.map_gt};
  }

  void stage_synth() {
    if (cfg_.source != "synthetic") return;  // validated before the run
    const SceneSpec scene = default_scene(cfg_.seed);
    const GaussianMap gt = generate_scene(scene);
    fs::create_directories(paths_.dataset);
    save_map(gt, paths_.map_gt.string());

    const PinholeIntrinsics K =
        intrinsics_from_fov(cfg_.width, cfg_.height, cfg_.fov_deg);
    const int n_map = cfg_.train_count + cfg_.holdout_count;

    TrajectorySpec mspec;
    mspec.waypoints = kMappingWaypoints;
    mspec.frame_rate = frame_rate_for(kMappingWaypoints, n_map);
    const auto mapping_traj = generate_trajectory(mspec, scene);

    // Interleaved holdout split.
    const int period =
        std::max(1, int(mapping_traj.size()) / std::max(1, cfg_.holdout_count));
    std::vector<TimedPose> train_traj, holdout_traj;
    int holdout_left = cfg_.holdout_count;
    for (size_t i = 0; i < mapping_traj.size(); ++i) {
      if (holdout_left > 0 && int(i) % period == period / 2) {
        holdout_traj.push_back(mapping_traj[i]);
        --holdout_left;
      } else {
        train_traj.push_back(mapping_traj[i]);
      }
    }

    DatasetPerturbations train_pert;
    train_pert.exposure = cfg_.exposure_perturbation;
    train_pert.supersample = cfg_.supersample;
    train_pert.psf_variance = cfg_.psf_variance;
    train_pert.seed = mix_seed(cfg_.seed, 101);
    Dataset mapping;
    mapping.intrinsics = K;
    mapping.views = render_dataset(gt, train_traj, K, train_pert, cfg_.threads);
    for (const auto& tp : train_traj) mapping.timestamps.push_back(tp.timestamp);
    save_dataset(paths_.mapping.string(), mapping);

    DatasetPerturbations clean;
    clean.supersample = cfg_.supersample;
    clean.psf_variance = cfg_.psf_variance;
    Dataset holdout;
    holdout.intrinsics = K;
    holdout.views = render_dataset(gt, holdout_traj, K, clean, cfg_.threads);
    for (const auto& tp : holdout_traj) holdout.timestamps.push_back(tp.timestamp);
    save_dataset(paths_.holdout.string(), holdout);

    TrajectorySpec qspec;
    qspec.waypoints = kMappingWaypoints;
    qspec.lateral_offset = cfg_.query_lateral_offset;
    qspec.reverse = cfg_.query_reverse;
    qspec.frame_rate = frame_rate_for(kMappingWaypoints, cfg_.query_count);
    const auto query_traj = generate_trajectory(qspec, scene);
    Dataset query;
    query.intrinsics = K;
    query.views = render_dataset(gt, query_traj, K, clean, cfg_.threads);
    for (const auto& tp : query_traj) query.timestamps.push_back(tp.timestamp);
    save_dataset(paths_.query.string(), query);
  }

  void stage_optimize(char tag) {
    const Dataset mapping = ingest_dataset(paths_.mapping.string());

    GaussianMap init;
    if (fs::exists(paths_.map_gt)) {
      init = load_map(paths_.map_gt.string());
      std::mt19937_64 rng(mix_seed(cfg_.seed, 0x0abc));
      std::normal_distribution<double> pn(0.0, cfg_.init_position_noise);
      std::normal_distribution<double> cn(0.0, cfg_.init_color_noise);
      for (auto& g : init.primitives) {
        g.position += Vec3(pn(rng), pn(rng), pn(rng));
        for (int c = 0; c < 3; ++c)
          g.color[c] = std::clamp(g.color[c] + cn(rng), 0.0, 1.0);
      }
    } else {
      init = init_map_from_rgbd(mapping.views, 4, cfg_.seed);
    }

    OptimConfig ocfg;
    ocfg.iterations = cfg_.iterations;
    ocfg.lambda_depth = cfg_.lambda_depth;
    ocfg.exposure_enabled = tag != 'a';
    ocfg.antialias_enabled = tag == 'c';
    ocfg.render.antialias_enabled = tag == 'c';
    ocfg.render.threads = cfg_.threads;
    ocfg.seed = mix_seed(cfg_.seed, 0x09);
    OptimizeResult result = optimize_map(init, mapping.views, ocfg);
    result.map.metadata.config_tag = std::string(1, tag);
    save_map(result.map, paths_.map_ply(tag).string());
    save_losses_csv(paths_.losses(tag).string(), result.history);
  }

  void stage_augment() {
    const GaussianMap map = load_map(paths_.map_ply('c').string());
    const Dataset mapping = ingest_dataset(paths_.mapping.string());

    ReferenceSet set;
    for (const auto& view : mapping.views) {
      ReferenceView rv;
      rv.image = view.image;
      rv.depth = view.depth;
      rv.pose = view.pose;
      rv.intrinsics = view.intrinsics;
      rv.provenance = Provenance::kKeyframe;
      rv.alpha_coverage = 1.0;
      set.views.push_back(std::move(rv));
    }
    for (size_t i = 0; i < set.views.size(); ++i)
      set.views[i].source_keyframe_index = int(i);

    const int stride = std::max(1, cfg_.keyframe_stride);
    std::vector<TrainView> strided;
    std::vector<int> strided_index;
    for (size_t i = 0; i < mapping.views.size(); i += stride) {
      strided.push_back(mapping.views[i]);
      strided_index.push_back(int(i));
    }
    SamplingConfig scfg = cfg_.sampling;
    scfg.seed = mix_seed(cfg_.seed, 0x5a17);
    RenderConfig rcfg;
    rcfg.threads = cfg_.threads;
    ReferenceSet sampled =
        generate_reference_set(map, strided, scfg, rcfg, cfg_.min_coverage);
    set.dropped_low_coverage = sampled.dropped_low_coverage;
    for (auto& view : sampled.views) {
      if (view.provenance != Provenance::kRendered) continue;
      view.source_keyframe_index = strided_index[view.source_keyframe_index];
      set.views.push_back(std::move(view));
    }
    save_reference_set(paths_.refs.string(), set);
  }

  std::vector<ReferenceView> load_refs(const std::string& variant) const {
    ReferenceSet set = load_reference_set(paths_.refs.string());
    std::vector<ReferenceView> views;
    for (auto& v : set.views)
      if (variant == "aug" || v.provenance == Provenance::kKeyframe)
        views.push_back(std::move(v));
    return views;
  }

  void stage_hgvl(const std::string& variant) {
    const auto refs = load_refs(variant);
    HgvlConfig hcfg = cfg_.hgvl;
    hcfg.threads = cfg_.threads;

    // Feature cache keyed by position in the manifest; the keyframes-only
    // variant is a prefix of the full set, so the cache is shared.
    const fs::path cache_dir = paths_.refs / "features";
    fs::create_directories(cache_dir);
    ReferenceDatabase db;
    db.poses.resize(refs.size());
    db.features.resize(refs.size());
    if (!refs.empty()) db.intrinsics = refs.front().intrinsics;
    std::atomic<size_t> next{0};
    auto worker = [&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= refs.size()) return;
        db.poses[i] = refs[i].pose;
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.bin", i);
        const fs::path cache = cache_dir / name;
        if (fs::exists(cache)) {
          db.features[i] = load_view_features(cache.string());
        } else {
          db.features[i].global = global_descriptor(refs[i].image);
          db.features[i].local =
              detect_and_describe(refs[i].image, hcfg.max_features);
          save_view_features(cache.string(), db.features[i]);
        }
      }
    };
    run_parallel(worker, refs.size());

    const Dataset queries = ingest_dataset(paths_.query.string());
    std::vector<QueryResult> results(queries.views.size());
    std::atomic<size_t> qnext{0};
    auto qworker = [&] {
      for (;;) {
        const size_t qi = qnext.fetch_add(1);
        if (qi >= queries.views.size()) return;
        HgvlConfig qcfg = hcfg;
        qcfg.threads = 1;
        qcfg.seed = mix_seed(cfg_.seed, 0x77c1 + qi);
        results[qi].query = int(qi);
        results[qi].loc = localize_hgvl(queries.views[qi].image, db,
                                        queries.intrinsics, qcfg);
      }
    };
    run_parallel(qworker, queries.views.size());
    save_results_csv(paths_.results("hgvl_" + variant).string(), results);
  }

  void stage_scr_train(const std::string& variant) {
    const auto refs = load_refs(variant);
    ScrConfig scfg = cfg_.scr;
    scfg.threads = cfg_.threads;
    scfg.seed = mix_seed(cfg_.seed, 0x5c21);
    const ScrTrainingSet set = build_training_set(refs, scfg);
    if (set.skipped_no_depth > 0)
      log_ << "  warning: " << set.skipped_no_depth
           << " reference views had no valid depth\n";
    const RegressionForest forest = train_forest(set, scfg);
    save_forest(paths_.forest(variant).string(), forest);
  }

  void stage_loc_scr(const std::string& variant) {
    const RegressionForest forest = load_forest(paths_.forest(variant).string());
    const Dataset queries = ingest_dataset(paths_.query.string());
    std::vector<QueryResult> results(queries.views.size());
    std::atomic<size_t> qnext{0};
    auto qworker = [&] {
      for (;;) {
        const size_t qi = qnext.fetch_add(1);
        if (qi >= queries.views.size()) return;
        ScrConfig qcfg = cfg_.scr;
        qcfg.seed = mix_seed(cfg_.seed, 0x3d05 + qi);
        results[qi].query = int(qi);
        results[qi].loc =
            localize_scr(forest, queries.views[qi].image, queries.intrinsics, qcfg);
      }
    };
    run_parallel(qworker, queries.views.size());
    save_results_csv(paths_.results("scr_" + variant).string(), results);
  }

  void stage_eval() {
    const auto query_traj =
        load_trajectory((paths_.query / "trajectory.txt").string());

    EvalReport report;
    report.thresholds = cfg_.thresholds;
    for (const std::string name : {"hgvl_kf", "hgvl_aug", "scr_kf", "scr_aug"}) {
      const auto results = load_results_csv(paths_.results(name).string());
      MethodResult method;
      method.name = name;
      std::vector<TimedPose> est, ref;
      for (const auto& r : results) {
        if (r.query < 0 || r.query >= int(query_traj.size()))
          throw StageFailure("query index out of range in " + name);
        if (r.loc.status == LocStatus::kSuccess) {
          method.errors.push_back(
              pose_error(r.loc.pose, query_traj[r.query].pose));
          est.push_back({query_traj[r.query].timestamp, r.loc.pose});
          ref.push_back(query_traj[r.query]);
        } else {
          method.errors.push_back(std::nullopt);
        }
      }
      report.methods.push_back(std::move(method));
      if (est.size() >= 3) {
        try {
          report.ate.emplace_back(name, compute_ate(est, ref, false));
        } catch (const DegenerateConfiguration&) {
          // too few well-spread successes for alignment; omit the row
        }
      }
    }

    const Dataset holdout = ingest_dataset(paths_.holdout.string());
    for (const char tag : {'a', 'b', 'c'}) {
      const GaussianMap map = load_map(paths_.map_ply(tag).string());
      RenderConfig rcfg;
      rcfg.antialias_enabled = tag == 'c';
      rcfg.threads = cfg_.threads;
      double sum = 0;
      for (const auto& view : holdout.views) {
        const RenderedFrame frame =
            render(map, view.pose, holdout.intrinsics, rcfg);
        sum += compute_psnr(frame.color, view.image);
      }
      report.psnr.emplace_back(std::string("config_") + tag,
                               sum / double(holdout.views.size()));
    }

    emit_report(report, paths_.report.string());
  }

  void run_parallel(const std::function<void()>& worker, size_t jobs) const {
    const int threads = int(std::min<size_t>(size_t(std::max(1, cfg_.threads)),
                                             std::max<size_t>(1, jobs)));
    if (threads <= 1) {
      worker();
      return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  PipelineConfig cfg_;
  std::ostream& log_;
  Paths paths_;
  StageCache cache_;
  bool failed_ = false;
};

std::vector<std::string> validate_config(const PipelineConfig& cfg) {
  std::vector<std::string> errors;
  if (cfg.width < 64 || cfg.height < 64)
    errors.push_back("dataset.width/height must be at least 64");
  if (cfg.train_count < 1 || cfg.holdout_count < 1 || cfg.query_count < 1)
    errors.push_back("dataset view counts must be positive");
  if (cfg.supersample < 1) errors.push_back("dataset.supersample must be >= 1");
  if (cfg.psf_variance < 0) errors.push_back("dataset.psf_variance must be >= 0");
  if (cfg.iterations < 1) errors.push_back("optimize.iterations must be >= 1");
  if (!cfg.thresholds.valid())
    errors.push_back("eval.thresholds must be strictly increasing");
  if (cfg.threads < 1) errors.push_back("run.threads must be >= 1");
  if (cfg.out_dir.empty()) errors.push_back("run.out must be set");
  if (cfg.source != "synthetic") {
    if (!fs::is_directory(cfg.source)) {
      errors.push_back("dataset.source directory does not exist: " + cfg.source);
    } else {
      for (const char* sub : {"mapping", "holdout", "query"}) {
        const auto rep = validate_dataset((fs::path(cfg.source) / sub).string());
        if (!rep.ok()) errors.push_back(std::string(sub) + ": " + rep.to_string());
      }
    }
  }
  return errors;
}

}  // namespace

int run_pipeline(const PipelineConfig& cfg, std::ostream& log) {
  const auto errors = validate_config(cfg);
  if (!errors.empty()) {
    log << "configuration invalid:\n";
    for (const auto& e : errors) log << "  " << e << "\n";
    return 1;
  }
  PipelineRunner runner(cfg, log);
  return runner.run();
}

}  // namespace gsloc
