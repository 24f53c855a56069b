#ifndef GSLOC_OPTIMIZER_HPP_
#define GSLOC_OPTIMIZER_HPP_

#include "gsloc/renderer.hpp"

namespace gsloc {

struct EmptyMask : std::runtime_error {
  EmptyMask() : std::runtime_error("photometric loss mask has no valid pixel") {}
};

struct Diverged : std::runtime_error {
  explicit Diverged(int iter)
      : std::runtime_error("loss became non-finite at iteration " +
                           std::to_string(iter)) {}
};

struct TrainView {
  Image image;  // HxWx3 in [0,1]
  Image depth;  // HxW meters, 0 = invalid
  CameraPose pose;
  PinholeIntrinsics intrinsics;
  ExposureAffine exposure;
};

struct OptimConfig {
  int iterations = 400;  // optimizer steps; one view per step, seeded shuffle
  double lr_position = 1e-3;
  double lr_rotation = 1e-3;
  double lr_log_scale = 2e-3;
  double lr_opacity = 2e-2;
  double lr_color = 5e-3;
  double lr_exposure = 2e-3;
  double lambda_depth = 0.5;
  bool exposure_enabled = false;   // config (b)
  bool antialias_enabled = false;  // config (c)
  uint64_t seed = 0;
  int prune_interval = 500;
  double prune_opacity = 0.005;
  RenderConfig render;
};

// Mean absolute color difference over masked pixels and channels.
double photometric_loss(const Image& rendered, const Image& observed,
                        const Image& mask);

struct DepthLossValue {
  double loss = 0;
  size_t support = 0;  // pixels with observed depth > 0 and alpha > 0.5
};
DepthLossValue depth_loss(const Image& rendered_depth,
                          const Image& observed_depth,
                          const Image& rendered_alpha);

struct MapGradients {
  std::vector<Vec3> position;
  std::vector<Eigen::Vector4d> rotation;  // (w,x,y,z), through normalization
  std::vector<Vec3> log_scale;
  std::vector<double> opacity_logit;
  std::vector<Vec3> color;

  void resize(size_t n) {
    position.assign(n, Vec3::Zero());
    rotation.assign(n, Eigen::Vector4d::Zero());
    log_scale.assign(n, Vec3::Zero());
    opacity_logit.assign(n, 0.0);
    color.assign(n, Vec3::Zero());
  }
};

struct BackwardResult {
  MapGradients grads;
  Eigen::Matrix<double, 3, 4> exposure_grad = Eigen::Matrix<double, 3, 4>::Zero();
  double photometric = 0;
  DepthLossValue depth;
  double total = 0;
};

// d(photometric + lambda*depth)/dtheta for every contributing primitive and
// the view's exposure affine. Non-contributing primitives get exact zeros.
// Deterministic for any thread count (per-tile accumulation, reduced in tile
// order).
BackwardResult render_backward(const GaussianMap& map, const TrainView& view,
                               const OptimConfig& cfg);

struct LossRecord {
  int iter;
  double photometric;
  double depth;
  double total;
};

struct OptimizeResult {
  GaussianMap map;
  std::vector<ExposureAffine> exposures;  // one per view
  std::vector<LossRecord> history;
};

// Adam (beta1=0.9, beta2=0.999, eps=1e-15), rotations renormalized each step,
// periodic opacity pruning. Deterministic given the seed.
OptimizeResult optimize_map(const GaussianMap& init,
                            const std::vector<TrainView>& views,
                            const OptimConfig& cfg);

}  // namespace gsloc

#endif
