#ifndef GSLOC_PNP_HPP_
#define GSLOC_PNP_HPP_

#include "gsloc/geometry.hpp"

namespace gsloc {

struct RansacFailed : std::runtime_error {
  explicit RansacFailed(int best_inliers)
      : std::runtime_error("pnp_ransac: best inlier count " +
                           std::to_string(best_inliers) + " below minimum") {}
};

inline constexpr int kMinPnPInliers = 12;

struct TrackObservation {
  int view;
  Vec2 pixel;
};

struct TriangulatedPoint {
  Vec3 point;  // world frame
  std::vector<TrackObservation> observations;
};

// Linear (DLT) multi-view triangulation from known poses. Tracks are rejected
// when the maximum pairwise ray angle is below min_angle_deg, any reprojection
// error exceeds max_reproj_px, or any view sees the point behind the camera.
std::vector<TriangulatedPoint> triangulate_tracks(
    const std::vector<std::vector<TrackObservation>>& tracks,
    const std::vector<CameraPose>& view_poses, const PinholeIntrinsics& K,
    double min_angle_deg = 1.0, double max_reproj_px = 2.0);

struct Correspondence2D3D {
  Vec3 point;   // world
  Vec2 pixel;
};

struct PnPResult {
  CameraPose pose;  // world-from-camera
  std::vector<int> inliers;
};

// RANSAC over 6-point DLT pose hypotheses (projection estimate, rotation
// snapped by orthogonal Procrustes, cheirality-fixed sign), scored by
// reprojection-inlier count, then Levenberg-Marquardt refinement on the
// inliers. Deterministic given the seed. Throws RansacFailed when the best
// hypothesis has fewer than kMinPnPInliers inliers.
PnPResult pnp_ransac(const std::vector<Correspondence2D3D>& corrs,
                     const PinholeIntrinsics& K, double threshold_px = 3.0,
                     int max_iters = 2000, uint64_t seed = 0);

}  // namespace gsloc

#endif
