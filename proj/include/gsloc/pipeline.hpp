#ifndef GSLOC_PIPELINE_HPP_
#define GSLOC_PIPELINE_HPP_

#include <iosfwd>
#include <map>

#include "gsloc/dataset.hpp"
#include "gsloc/evalmetrics.hpp"
#include "gsloc/scr.hpp"
#include "gsloc/synth.hpp"

namespace gsloc {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Flat sectioned key-value configuration: `[section]` headers, `key = value`
// lines, '#' comments. Unknown keys are rejected.
struct PipelineConfig {
  // [dataset]
  std::string source = "synthetic";  // "synthetic" or a dataset directory
  int width = 160, height = 120;
  double fov_deg = 60;
  int train_count = 50;
  int holdout_count = 10;
  int query_count = 40;
  int supersample = 3;
  bool exposure_perturbation = true;
  double psf_variance = 0.3;  // simulated sensor PSF, output px^2
  double query_lateral_offset = 1.0;
  bool query_reverse = true;

  // [optimize]
  int iterations = 600;
  double init_position_noise = 0.02;
  double init_color_noise = 0.05;
  double lambda_depth = 0.5;

  // [augment]
  SamplingConfig sampling;
  double min_coverage = 0.2;
  int keyframe_stride = 2;  // render samples from every Nth keyframe

  // [hgvl]
  HgvlConfig hgvl;

  // [scr]
  ScrConfig scr;

  // [eval]
  ThresholdSpec thresholds;

  // [run]
  uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = "out";
};

PipelineConfig parse_pipeline_config(const std::string& path);
PipelineConfig parse_pipeline_config_text(const std::string& text);
std::string pipeline_config_text(const PipelineConfig& cfg);

// Shared results.csv schema for both localizers.
struct QueryResult {
  int query = 0;
  LocalizationResult loc;
};
void save_results_csv(const std::string& path,
                      const std::vector<QueryResult>& results);
std::vector<QueryResult> load_results_csv(const std::string& path);

void save_losses_csv(const std::string& path,
                     const std::vector<LossRecord>& history);

// Isotropic seed Gaussians back-projected from the views' valid depth pixels;
// the initialization path for ingested datasets without a ground-truth map.
GaussianMap init_map_from_rgbd(const std::vector<TrainView>& views, int stride,
                               uint64_t seed);

// FNV-1a 64-bit, used for content-hash stage caching.
uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL);

// Exit codes: 0 success, 1 validation failure, 2 stage failure. Completed
// stages are cached by a content hash of their config slice and upstream
// hashes; unchanged stages are skipped on re-runs.
int run_pipeline(const PipelineConfig& cfg, std::ostream& log);

}  // namespace gsloc

#endif
