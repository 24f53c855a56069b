#ifndef GSLOC_HGVL_HPP_
#define GSLOC_HGVL_HPP_

#include "gsloc/augment.hpp"
#include "gsloc/features.hpp"
#include "gsloc/pnp.hpp"

namespace gsloc {

enum class LocStatus {
  kSuccess,
  kRetrievalFailed,
  kInsufficientMatches,
  kRansacFailed,
};

const char* to_string(LocStatus s);
LocStatus loc_status_from_string(const std::string& s);

struct LocalizationResult {
  CameraPose pose;
  int inlier_count = 0;
  int num_3d_points = 0;
  LocStatus status = LocStatus::kRansacFailed;
  double elapsed_ms = 0;
};

struct HgvlConfig {
  int top_k = 10;
  int max_features = 1500;
  double match_ratio = 0.8;
  double min_triangulation_angle_deg = 1.0;
  double max_triangulation_reproj_px = 2.0;
  double ransac_threshold_px = 3.0;
  int ransac_iters = 2000;
  uint64_t seed = 0;
  int threads = 1;
};

// Reference views with precomputed global descriptors and local features.
struct ReferenceDatabase {
  std::vector<CameraPose> poses;
  std::vector<ViewFeatures> features;
  PinholeIntrinsics intrinsics;
};

ReferenceDatabase build_reference_database(const std::vector<ReferenceView>& refs,
                                           const HgvlConfig& cfg);

// Retrieval -> pairwise matching -> triangulation from known reference poses
// -> PnP/RANSAC. The status reflects the first failed stage.
LocalizationResult localize_hgvl(const Image& query, const ReferenceDatabase& db,
                                 const PinholeIntrinsics& K,
                                 const HgvlConfig& cfg);

}  // namespace gsloc

#endif
