#include "gsloc/augment.hpp"

#include <random>

#include "gsloc/synth.hpp"

namespace gsloc {

std::vector<CameraPose> sample_poses(const CameraPose& keyframe,
                                     const SamplingConfig& cfg,
                                     int keyframe_index) {
  std::mt19937_64 rng(mix_seed(cfg.seed, uint64_t(keyframe_index) + 0xa0a0ULL));
  auto uniform = [&](double range) {
    if (range <= 0) return 0.0;
    return range * (2.0 * (double(rng() >> 11) * 0x1.0p-53) - 1.0);
  };

  const Mat3 R = keyframe.rotation.toRotationMatrix();
  const Vec3 right = R.col(0), down = R.col(1), forward = R.col(2);
  const Vec3 up = -down;

  std::vector<CameraPose> out;
  out.reserve(cfg.samples_per_keyframe);
  for (int i = 0; i < cfg.samples_per_keyframe; ++i) {
    const double lon = uniform(cfg.longitudinal_range);
    const double lat = uniform(cfg.lateral_range);
    const double vert = uniform(cfg.vertical_range);
    const double yaw = uniform(cfg.yaw_range_deg) * M_PI / 180.0;
    const Vec3 pos = keyframe.translation + lon * forward + lat * right + vert * up;
    const Quat q = Quat(Eigen::AngleAxisd(yaw, up)) * keyframe.rotation;
    out.emplace_back(q, pos);
  }
  return out;
}

ReferenceSet generate_reference_set(const GaussianMap& map,
                                    const std::vector<TrainView>& keyframes,
                                    const SamplingConfig& cfg,
                                    const RenderConfig& render_cfg,
                                    double min_coverage) {
  ReferenceSet set;
  for (size_t i = 0; i < keyframes.size(); ++i) {
    ReferenceView rv;
    rv.image = keyframes[i].image;
    rv.depth = keyframes[i].depth;
    rv.pose = keyframes[i].pose;
    rv.intrinsics = keyframes[i].intrinsics;
    rv.provenance = Provenance::kKeyframe;
    rv.source_keyframe_index = int(i);
    rv.alpha_coverage = 1.0;
    set.views.push_back(std::move(rv));
  }
  for (size_t i = 0; i < keyframes.size(); ++i) {
    const auto poses = sample_poses(keyframes[i].pose, cfg, int(i));
    for (const auto& pose : poses) {
      const RenderedFrame frame =
          render(map, pose, keyframes[i].intrinsics, render_cfg);
      size_t covered = 0;
      for (const double a : frame.alpha.data)
        if (a > 0.5) ++covered;
      const double coverage = double(covered) / double(frame.alpha.pixel_count());
      if (coverage < min_coverage) {
        ++set.dropped_low_coverage;
        continue;
      }
      ReferenceView rv;
      rv.image = frame.color;
      rv.depth = frame.depth;
      rv.pose = pose;
      rv.intrinsics = keyframes[i].intrinsics;
      rv.provenance = Provenance::kRendered;
      rv.source_keyframe_index = int(i);
      rv.alpha_coverage = coverage;
      set.views.push_back(std::move(rv));
    }
  }
  return set;
}

}  // namespace gsloc
