#ifndef GSLOC_SCR_HPP_
#define GSLOC_SCR_HPP_

#include "gsloc/augment.hpp"
#include "gsloc/hgvl.hpp"

namespace gsloc {

struct InsufficientSamples : std::runtime_error {
  explicit InsufficientSamples(size_t got, size_t need)
      : std::runtime_error("train_forest: " + std::to_string(got) +
                           " samples, need >= " + std::to_string(need)) {}
};

inline constexpr double kScrWorkingScale = 0.25;
inline constexpr int kScrOffsetRange = 10;  // px at working resolution

struct ScrTrainingSample {
  float u, v;          // working-resolution pixel center
  int context;         // index into ScrTrainingSet::contexts
  Vec3 target;         // world coordinate, meters
  int source_view;
  Provenance provenance;
};

struct ScrTrainingSet {
  std::vector<ScrTrainingSample> samples;
  std::vector<Image> contexts;  // working-resolution RGB images
  int skipped_no_depth = 0;     // views contributing zero samples
};

struct ScrConfig {
  int samples_per_view = 2000;
  bool augment = false;
  int num_trees = 5;
  int max_depth = 16;
  int candidate_splits = 256;
  int min_leaf_samples = 10;
  int split_score_subsample = 512;
  int predict_stride = 4;
  double ransac_threshold_px = 10.0;  // at working resolution
  int ransac_iters = 256;
  uint64_t seed = 0;
  int threads = 1;
};

// Uniform seeded sampling of valid-depth pixels; targets back-projected
// through the view pose. With augment on, each view also contributes samples
// from a brightness/contrast-jittered, in-plane-rotated copy of its image,
// with pixel coordinates remapped by the same rotation.
ScrTrainingSet build_training_set(const std::vector<ReferenceView>& views,
                                  const ScrConfig& cfg);

struct SplitFeature {
  int16_t ch1 = 0, ch2 = 0;
  int16_t o1x = 0, o1y = 0, o2x = 0, o2y = 0;
  float threshold = 0;
};

struct LeafMode {
  Vec3 mean = Vec3::Zero();
  double cov_trace = 0;
  int count = 0;
};

struct ForestNode {
  SplitFeature split;
  int32_t left = -1, right = -1;  // -1 for leaves
  std::vector<LeafMode> modes;    // non-empty for leaves only
};

struct RegressionForest {
  std::vector<std::vector<ForestNode>> trees;  // node 0 is the root
  double working_scale = kScrWorkingScale;
  Vec3 bbox_min = Vec3::Zero();  // scene bounds expanded by 10%
  Vec3 bbox_max = Vec3::Zero();
  uint64_t seed = 0;
};

// Greedy variance-reduction trees over pixel-difference features, bagged
// subsets (63%) per tree, <= 3 k-means leaf modes. Deterministic given seed.
RegressionForest train_forest(const ScrTrainingSet& set, const ScrConfig& cfg);

struct SceneCoordPrediction {
  Vec2 pixel;        // working-resolution pixel center
  Vec3 coord;        // clamped into the forest bounding box
  double confidence; // inverse covariance trace of the chosen mode
};

// Route each strided pixel through all trees, merge leaf modes, keep the
// highest-count mode (ties by smaller covariance trace).
std::vector<SceneCoordPrediction> predict_scene_coords(
    const RegressionForest& forest, const Image& working_image, int stride = 4);

// Downscales the query to working resolution, predicts scene coordinates,
// keeps the most confident predictions and solves PnP at 10 px threshold.
LocalizationResult localize_scr(const RegressionForest& forest,
                                const Image& query, const PinholeIntrinsics& K,
                                const ScrConfig& cfg);

void save_forest(const std::string& path, const RegressionForest& forest);
RegressionForest load_forest(const std::string& path);

// Area downsample of color to working resolution; used for both training
// contexts and queries so split features see the same statistics.
Image to_working_resolution(const Image& image, double scale = kScrWorkingScale);

}  // namespace gsloc

#endif
