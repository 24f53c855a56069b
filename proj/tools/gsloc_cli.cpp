#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "gsloc/dataset.hpp"
#include "gsloc/evalmetrics.hpp"
#include "gsloc/image_io.hpp"
#include "gsloc/pipeline.hpp"
#include "gsloc/scr.hpp"
#include "gsloc/synth.hpp"

namespace fs = std::filesystem;
using namespace gsloc;

namespace {

// GSLOC_THREADS caps the worker count for every subcommand.
int thread_cap(int requested) {
  int cap = 0;
  if (const char* env = std::getenv("GSLOC_THREADS")) cap = std::atoi(env);
  if (cap > 0 && (requested <= 0 || requested > cap)) return cap;
  return std::max(1, requested);
}

std::string frame_png(size_t i, const char* suffix = nullptr) {
  char buf[48];
  if (suffix)
    std::snprintf(buf, sizeof(buf), "%06zu_%s.png", i, suffix);
  else
    std::snprintf(buf, sizeof(buf), "%06zu.png", i);
  return buf;
}

int cmd_synth(const std::string& scene_name, const std::string& out,
              uint64_t seed, int count, int width, int height, double fov_deg,
              int supersample, bool exposure, double psf_variance, int threads) {
  if (scene_name != "default") {
    std::cerr << "unknown scene '" << scene_name << "' (only: default)\n";
    return 1;
  }
  const SceneSpec scene = default_scene(seed);
  const GaussianMap map = generate_scene(scene);
  fs::create_directories(out);
  save_map(map, (fs::path(out) / "map_gt.ply").string());

  PinholeIntrinsics K;
  K.width = width;
  K.height = height;
  K.fx = K.fy = 0.5 * width / std::tan(0.5 * fov_deg * M_PI / 180.0);
  K.cx = 0.5 * width;
  K.cy = 0.5 * height;

  TrajectorySpec tspec;
  tspec.waypoints = {{1.5, 3.4}, {5.0, 3.4}, {7.0, 4.6}, {10.5, 4.6}};
  double length = 0;
  for (size_t i = 1; i < tspec.waypoints.size(); ++i)
    length += (tspec.waypoints[i] - tspec.waypoints[i - 1]).norm();
  tspec.frame_rate = double(std::max(1, count - 1)) / length;
  const auto traj = generate_trajectory(tspec, scene);

  DatasetPerturbations pert;
  pert.exposure = exposure;
  pert.supersample = supersample;
  pert.psf_variance = psf_variance;
  pert.seed = mix_seed(seed, 101);

  Dataset ds;
  ds.intrinsics = K;
  ds.views = render_dataset(map, traj, K, pert, threads);
  for (const auto& tp : traj) ds.timestamps.push_back(tp.timestamp);
  save_dataset(out, ds);
  std::cout << "wrote " << ds.views.size() << " views and map_gt.ply to " << out
            << "\n";
  return 0;
}

int cmd_optimize(const std::string& config_tag, const std::string& views_dir,
                 const std::string& init_path, const std::string& out_path,
                 const std::string& log_path, int iterations, double lambda_depth,
                 uint64_t seed, int threads) {
  if (config_tag != "a" && config_tag != "b" && config_tag != "c") {
    std::cerr << "--config must be a, b or c\n";
    return 1;
  }
  const Dataset ds = ingest_dataset(views_dir);
  GaussianMap init;
  if (!init_path.empty()) {
    init = load_map(init_path);
  } else {
    init = init_map_from_rgbd(ds.views, 4, seed);
  }
  OptimConfig cfg;
  cfg.iterations = iterations;
  cfg.lambda_depth = lambda_depth;
  cfg.exposure_enabled = config_tag != "a";
  cfg.antialias_enabled = config_tag == "c";
  cfg.render.antialias_enabled = config_tag == "c";
  cfg.render.threads = threads;
  cfg.seed = seed;
  OptimizeResult result = optimize_map(init, ds.views, cfg);
  result.map.metadata.config_tag = config_tag;
  save_map(result.map, out_path);
  if (!log_path.empty()) save_losses_csv(log_path, result.history);
  std::cout << "optimized map with " << result.map.primitives.size()
            << " primitives -> " << out_path << "\n";
  return 0;
}

int cmd_render(const std::string& map_path, const std::string& pose_file,
               const std::string& intrinsics_path, const std::string& out_dir,
               bool antialias, int threads) {
  const GaussianMap map = load_map(map_path);
  const auto traj = load_trajectory(pose_file);
  const PinholeIntrinsics K = load_intrinsics(intrinsics_path);
  RenderConfig cfg;
  cfg.antialias_enabled = antialias;
  cfg.threads = threads;
  fs::create_directories(out_dir);
  for (size_t i = 0; i < traj.size(); ++i) {
    const RenderedFrame frame = render(map, traj[i].pose, K, cfg);
    save_png8((fs::path(out_dir) / frame_png(i, "color")).string(), frame.color);
    save_depth_png16((fs::path(out_dir) / frame_png(i, "depth")).string(),
                     frame.depth);
    save_png8((fs::path(out_dir) / frame_png(i, "alpha")).string(), frame.alpha);
  }
  std::cout << "rendered " << traj.size() << " poses to " << out_dir << "\n";
  return 0;
}

int cmd_augment(const std::string& map_path, const std::string& keyframes_dir,
                const std::string& out_dir, const SamplingConfig& scfg,
                double min_coverage, int threads) {
  const GaussianMap map = load_map(map_path);
  const Dataset kf = ingest_dataset(keyframes_dir);
  RenderConfig rcfg;
  rcfg.threads = threads;
  const ReferenceSet set =
      generate_reference_set(map, kf.views, scfg, rcfg, min_coverage);
  save_reference_set(out_dir, set);
  std::cout << "wrote " << set.views.size() << " reference views ("
            << set.dropped_low_coverage << " dropped for low coverage) to "
            << out_dir << "\n";
  return 0;
}

std::vector<ReferenceView> filter_refs(ReferenceSet set, bool with_rendered) {
  std::vector<ReferenceView> views;
  for (auto& v : set.views)
    if (with_rendered || v.provenance == Provenance::kKeyframe)
      views.push_back(std::move(v));
  return views;
}

int cmd_loc_hgvl(const std::string& refs_dir, const std::string& queries_dir,
                 const std::string& out_csv, bool with_rendered, int top_k,
                 uint64_t seed, int threads) {
  const auto refs = filter_refs(load_reference_set(refs_dir), with_rendered);
  HgvlConfig cfg;
  cfg.top_k = top_k;
  cfg.threads = threads;
  const ReferenceDatabase db = build_reference_database(refs, cfg);
  const Dataset queries = ingest_dataset(queries_dir);
  std::vector<QueryResult> results(queries.views.size());
  for (size_t i = 0; i < queries.views.size(); ++i) {
    HgvlConfig qcfg = cfg;
    qcfg.threads = 1;
    qcfg.seed = mix_seed(seed, 0x77c1 + i);
    results[i].query = int(i);
    results[i].loc =
        localize_hgvl(queries.views[i].image, db, queries.intrinsics, qcfg);
  }
  save_results_csv(out_csv, results);
  std::cout << "localized " << results.size() << " queries -> " << out_csv << "\n";
  return 0;
}

int cmd_scr_train(const std::string& refs_dir, bool with_rendered,
                  const std::string& out_path, int samples_per_view,
                  bool augment, uint64_t seed, int threads) {
  const auto refs = filter_refs(load_reference_set(refs_dir), with_rendered);
  ScrConfig cfg;
  cfg.samples_per_view = samples_per_view;
  cfg.augment = augment;
  cfg.seed = seed;
  cfg.threads = threads;
  const ScrTrainingSet set = build_training_set(refs, cfg);
  const RegressionForest forest = train_forest(set, cfg);
  save_forest(out_path, forest);
  std::cout << "trained forest on " << set.samples.size() << " samples -> "
            << out_path << "\n";
  return 0;
}

int cmd_loc_scr(const std::string& forest_path, const std::string& queries_dir,
                const std::string& out_csv, uint64_t seed) {
  const RegressionForest forest = load_forest(forest_path);
  const Dataset queries = ingest_dataset(queries_dir);
  std::vector<QueryResult> results(queries.views.size());
  for (size_t i = 0; i < queries.views.size(); ++i) {
    ScrConfig cfg;
    cfg.seed = mix_seed(seed, 0x3d05 + i);
    results[i].query = int(i);
    results[i].loc =
        localize_scr(forest, queries.views[i].image, queries.intrinsics, cfg);
  }
  save_results_csv(out_csv, results);
  std::cout << "localized " << results.size() << " queries -> " << out_csv << "\n";
  return 0;
}

int cmd_eval(const std::string& gt_path,
             const std::vector<std::string>& results_specs,
             const std::string& out_dir) {
  const auto gt = load_trajectory(gt_path);
  EvalReport report;
  for (const auto& spec : results_specs) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos) {
      std::cerr << "--results expects name=path, got '" << spec << "'\n";
      return 1;
    }
    MethodResult method;
    method.name = spec.substr(0, eq);
    std::vector<TimedPose> est, ref;
    for (const auto& r : load_results_csv(spec.substr(eq + 1))) {
      if (r.query < 0 || r.query >= int(gt.size())) {
        std::cerr << "query index " << r.query << " outside ground truth\n";
        return 1;
      }
      if (r.loc.status == LocStatus::kSuccess) {
        method.errors.push_back(pose_error(r.loc.pose, gt[r.query].pose));
        est.push_back({gt[r.query].timestamp, r.loc.pose});
        ref.push_back(gt[r.query]);
      } else {
        method.errors.push_back(std::nullopt);
      }
    }
    if (est.size() >= 3) {
      try {
        report.ate.emplace_back(method.name, compute_ate(est, ref, false));
      } catch (const DegenerateConfiguration&) {
      }
    }
    report.methods.push_back(std::move(method));
  }
  emit_report(report, out_dir);
  std::cout << "wrote report to " << out_dir << "\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  for (const char* name : {"recall.csv", "ate.csv", "psnr.csv"}) {
    const fs::path p = fs::path(dir) / name;
    std::ifstream in(p);
    if (!in) {
      std::cerr << "missing " << p.string() << "\n";
      return 1;
    }
    std::cout << "== " << name << " ==\n" << in.rdbuf() << "\n";
  }
  return 0;
}

int cmd_map_info(const std::string& map_path) {
  const GaussianMap map = load_map(map_path);
  std::cout << "count " << map.primitives.size() << "\n";
  if (map.primitives.empty()) return 0;
  Vec3 lo = map.primitives.front().position, hi = lo;
  int hist[10] = {};
  for (const auto& g : map.primitives) {
    lo = lo.cwiseMin(g.position);
    hi = hi.cwiseMax(g.position);
    hist[std::min(9, int(g.opacity() * 10))]++;
  }
  std::printf("bbox min %.4f %.4f %.4f\n", lo.x(), lo.y(), lo.z());
  std::printf("bbox max %.4f %.4f %.4f\n", hi.x(), hi.y(), hi.z());
  std::cout << "opacity histogram (0.1 bins):";
  for (int i = 0; i < 10; ++i) std::cout << " " << hist[i];
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-splatting mapping, view augmentation and localization"};
  app.require_subcommand(1);

  int threads = 0;  // 0 = use GSLOC_THREADS or 1
  app.add_option("--threads", threads, "worker thread cap (default: GSLOC_THREADS or 1)");

  // synth
  std::string scene = "default", out;
  uint64_t seed = 1;
  int count = 60, width = 160, height = 120, supersample = 3;
  double fov = 60, psf_variance = 0.3;
  bool exposure = false;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset + ground-truth map");
  synth->add_option("--scene", scene, "scene name (default)");
  synth->add_option("--out", out, "output dataset directory")->required();
  synth->add_option("--seed", seed);
  synth->add_option("--count", count, "number of views");
  synth->add_option("--width", width);
  synth->add_option("--height", height);
  synth->add_option("--fov", fov, "horizontal field of view, degrees");
  synth->add_option("--supersample", supersample);
  synth->add_option("--psf", psf_variance, "sensor PSF variance, px^2");
  synth->add_flag("--exposure", exposure, "apply per-view exposure perturbation");

  // optimize
  std::string opt_config = "a", views_dir, init_path, opt_out, log_path;
  int iterations = 400;
  double lambda_depth = 0.5;
  auto* optimize = app.add_subcommand("optimize", "optimize a Gaussian map against posed views");
  optimize->add_option("--config", opt_config, "ablation config: a|b|c")->required();
  optimize->add_option("--views", views_dir, "dataset directory")->required();
  optimize->add_option("--init", init_path, "initial map PLY (default: seed from RGB-D)");
  optimize->add_option("--out", opt_out, "output map PLY")->required();
  optimize->add_option("--log", log_path, "losses CSV path");
  optimize->add_option("--iters", iterations);
  optimize->add_option("--lambda-depth", lambda_depth);
  optimize->add_option("--seed", seed);

  // render
  std::string map_path, pose_file, intrinsics_path, render_out;
  bool antialias = false;
  auto* render_cmd = app.add_subcommand("render", "render poses from a map");
  render_cmd->add_option("--map", map_path)->required();
  render_cmd->add_option("--pose-file", pose_file)->required();
  render_cmd->add_option("--intrinsics", intrinsics_path)->required();
  render_cmd->add_option("--out", render_out)->required();
  render_cmd->add_flag("--aa", antialias, "enable anti-aliasing");

  // augment
  std::string keyframes_dir, refs_out;
  SamplingConfig scfg;
  double min_coverage = 0.2;
  auto* augment = app.add_subcommand("augment", "generate a rendered reference set");
  augment->add_option("--map", map_path)->required();
  augment->add_option("--keyframes", keyframes_dir)->required();
  augment->add_option("--out", refs_out)->required();
  augment->add_option("--samples", scfg.samples_per_keyframe);
  augment->add_option("--long", scfg.longitudinal_range);
  augment->add_option("--lat", scfg.lateral_range);
  augment->add_option("--yaw", scfg.yaw_range_deg);
  augment->add_option("--seed", scfg.seed);
  augment->add_option("--min-coverage", min_coverage);

  // loc-hgvl
  std::string refs_dir, queries_dir, results_out;
  bool with_rendered = true;
  int top_k = 10;
  auto* loc_hgvl = app.add_subcommand("loc-hgvl", "hierarchical geometric localization");
  loc_hgvl->add_option("--refs", refs_dir)->required();
  loc_hgvl->add_option("--queries", queries_dir)->required();
  loc_hgvl->add_option("--out", results_out)->required();
  loc_hgvl->add_option("--with-rendered", with_rendered, "use rendered reference views");
  loc_hgvl->add_option("--topk", top_k);
  loc_hgvl->add_option("--seed", seed);

  // scr-train
  std::string forest_out;
  int samples_per_view = 2000;
  bool scr_augment = true;
  auto* scr_train = app.add_subcommand("scr-train", "train a scene-coordinate forest");
  scr_train->add_option("--refs", refs_dir)->required();
  scr_train->add_option("--with-rendered", with_rendered, "train on rendered views too");
  scr_train->add_option("--out", forest_out)->required();
  scr_train->add_option("--samples-per-view", samples_per_view);
  scr_train->add_option("--augment", scr_augment, "brightness/contrast/rotation jitter");
  scr_train->add_option("--seed", seed);

  // loc-scr
  std::string forest_path;
  auto* loc_scr = app.add_subcommand("loc-scr", "scene-coordinate-regression localization");
  loc_scr->add_option("--forest", forest_path)->required();
  loc_scr->add_option("--queries", queries_dir)->required();
  loc_scr->add_option("--out", results_out)->required();
  loc_scr->add_option("--seed", seed);

  // eval
  std::string gt_path, report_out;
  std::vector<std::string> results_specs;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate results CSVs against a ground-truth trajectory");
  eval_cmd->add_option("--gt", gt_path, "ground-truth trajectory file")->required();
  eval_cmd->add_option("--results", results_specs, "name=results.csv (repeatable)")->required();
  eval_cmd->add_option("--out", report_out)->required();

  // report
  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "print report CSVs");
  report_cmd->add_option("--dir", report_dir, "report directory")->required();

  // run
  std::string config_path, run_out;
  auto* run_cmd = app.add_subcommand("run", "run the full pipeline from a config file");
  run_cmd->add_option("--config", config_path)->required();
  run_cmd->add_option("--out", run_out, "override [run] out");

  // map-info
  auto* map_info = app.add_subcommand("map-info", "print map summary");
  map_info->add_option("--map", map_path)->required();

  CLI11_PARSE(app, argc, argv);
  const int nthreads = thread_cap(threads);

  try {
    if (synth->parsed())
      return cmd_synth(scene, out, seed, count, width, height, fov, supersample,
                       exposure, psf_variance, nthreads);
    if (optimize->parsed())
      return cmd_optimize(opt_config, views_dir, init_path, opt_out, log_path,
                          iterations, lambda_depth, seed, nthreads);
    if (render_cmd->parsed())
      return cmd_render(map_path, pose_file, intrinsics_path, render_out,
                        antialias, nthreads);
    if (augment->parsed())
      return cmd_augment(map_path, keyframes_dir, refs_out, scfg, min_coverage,
                         nthreads);
    if (loc_hgvl->parsed())
      return cmd_loc_hgvl(refs_dir, queries_dir, results_out, with_rendered,
                          top_k, seed, nthreads);
    if (scr_train->parsed())
      return cmd_scr_train(refs_dir, with_rendered, forest_out, samples_per_view,
                           scr_augment, seed, nthreads);
    if (loc_scr->parsed())
      return cmd_loc_scr(forest_path, queries_dir, results_out, seed);
    if (eval_cmd->parsed()) return cmd_eval(gt_path, results_specs, report_out);
    if (report_cmd->parsed()) return cmd_report(report_dir);
    if (run_cmd->parsed()) {
      PipelineConfig cfg;
      try {
        cfg = parse_pipeline_config(config_path);
      } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 1;
      }
      if (!run_out.empty()) cfg.out_dir = run_out;
      if (threads > 0 || std::getenv("GSLOC_THREADS")) cfg.threads = nthreads;
      return run_pipeline(cfg, std::cout);
    }
    if (map_info->parsed()) return cmd_map_info(map_path);
  } catch (const DatasetInvalid& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
