#ifndef GSLOC_AUGMENT_HPP_
#define GSLOC_AUGMENT_HPP_

#include "gsloc/optimizer.hpp"

namespace gsloc {

struct SamplingConfig {
  int samples_per_keyframe = 25;
  double longitudinal_range = 0.5;  // meters, along the keyframe forward axis
  double lateral_range = 2.0;       // meters, along the keyframe right axis
  double yaw_range_deg = 180.0;     // about the keyframe up axis
  double vertical_range = 0.0;
  uint64_t seed = 0;
};

enum class Provenance { kKeyframe, kRendered };

struct ReferenceView {
  Image image;
  Image depth;  // valid for keyframes and rendered views (rasterizer depth)
  CameraPose pose;
  PinholeIntrinsics intrinsics;
  Provenance provenance = Provenance::kKeyframe;
  int source_keyframe_index = -1;
  double alpha_coverage = 1.0;  // fraction of pixels with alpha > 0.5
};

// Uniform offsets within hard bounds; deterministic given seed and
// keyframe index.
std::vector<CameraPose> sample_poses(const CameraPose& keyframe,
                                     const SamplingConfig& cfg,
                                     int keyframe_index);

struct ReferenceSet {
  std::vector<ReferenceView> views;
  int dropped_low_coverage = 0;
};

// All keyframes plus renders at sampled poses; rendered views below
// min_coverage are dropped and counted. min_coverage <= 0 keeps everything.
ReferenceSet generate_reference_set(const GaussianMap& map,
                                    const std::vector<TrainView>& keyframes,
                                    const SamplingConfig& cfg,
                                    const RenderConfig& render_cfg,
                                    double min_coverage = 0.2);

}  // namespace gsloc

#endif
