#ifndef GSLOC_RENDERER_HPP_
#define GSLOC_RENDERER_HPP_

#include <functional>
#include <optional>

#include "gsloc/gaussian_map.hpp"
#include "gsloc/image.hpp"

namespace gsloc {

struct RenderedFrame {
  Image color;  // HxWx3 linear RGB
  Image depth;  // HxW meters, alpha-weighted expected depth, 0 where alpha = 0
  Image alpha;  // HxW accumulated opacity
  CameraPose view_pose;
  PinholeIntrinsics intrinsics;
};

// Per-view affine color correction c' = A*c + b, stored as [A | b].
struct ExposureAffine {
  Eigen::Matrix<double, 3, 4> matrix = Eigen::Matrix<double, 3, 4>::Zero();

  ExposureAffine() { matrix.leftCols<3>().setIdentity(); }
  Mat3 A() const { return matrix.leftCols<3>(); }
  Vec3 b() const { return matrix.col(3); }
  bool is_identity() const {
    return matrix.leftCols<3>().isIdentity(0.0) && matrix.col(3).isZero(0.0);
  }
};

struct RenderConfig {
  bool antialias_enabled = true;
  double antialias_s = 0.3;        // screen-space dilation variance, px^2
  double alpha_cutoff = 1.0 / 255; // per-splat contribution floor
  double transmittance_stop = 1e-4;
  int tile_size = 16;
  int threads = 1;
};

struct ProjectedGaussian {
  Vec2 mean2d;
  Mat2 cov2d;     // after anti-aliasing when enabled
  double opacity; // after anti-aliasing attenuation
  double depth;
  Vec3 color;
  int index;      // primitive index in the map
  double radius;  // screen-space cutoff radius, pixels
};

// EWA local-affine projection of one Gaussian; nullopt when the Gaussian's
// 3-sigma support does not lie fully in front of z_near.
std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g,
                                                  const CameraPose& pose,
                                                  const PinholeIntrinsics& K,
                                                  double z_near = kZNear);

// Dilation filter: cov' = cov + s*I, opacity scaled by
// sqrt(det(cov)/det(cov')) so sub-pixel splats are attenuated.
void apply_antialias(Mat2& cov2d, double& opacity, double s);

// Perspective Jacobian of the pinhole projection at camera-frame point p.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p_cam,
                                                const PinholeIntrinsics& K);

// Cull + project + anti-alias + global depth sort (ties by primitive index).
std::vector<ProjectedGaussian> prepare_splats(const GaussianMap& map,
                                              const CameraPose& pose,
                                              const PinholeIntrinsics& K,
                                              const RenderConfig& cfg);

// Deterministic tile-based front-to-back compositing. Bit-identical output
// for any tile size or thread count.
RenderedFrame render(const GaussianMap& map, const CameraPose& pose,
                     const PinholeIntrinsics& K, const RenderConfig& cfg);

// Per pixel c' = clamp(A*c + b, 0, 1) on the color channels.
Image apply_exposure(const Image& color, const ExposureAffine& e);

// Splat indices binned to tiles by screen-space cutoff radius; bins keep the
// global depth order. Shared by the forward pass and the gradient pass.
struct TileGrid {
  int tiles_x = 0, tiles_y = 0, tile_size = 16;
  std::vector<std::vector<int>> bins;  // indices into the prepared splat list
};
TileGrid bin_splats(const std::vector<ProjectedGaussian>& splats,
                    const PinholeIntrinsics& K, int tile_size);

// Runs fn(tile_index) over all tiles using up to `threads` workers.
void parallel_tiles(int tile_count, int threads,
                    const std::function<void(int)>& fn);

}  // namespace gsloc

#endif
