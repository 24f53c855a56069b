#ifndef GSLOC_GAUSSIAN_MAP_HPP_
#define GSLOC_GAUSSIAN_MAP_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "gsloc/geometry.hpp"

namespace gsloc {

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what, int64_t offset = -1)
      : std::runtime_error(offset >= 0
                               ? what + " (byte offset " + std::to_string(offset) + ")"
                               : what) {}
};

struct VersionError : std::runtime_error {
  explicit VersionError(const std::string& what) : std::runtime_error(what) {}
};

// One anisotropic 3D Gaussian. Scale is stored as log standard deviations,
// opacity as a logit, so the optimizer is unconstrained.
struct GaussianPrimitive {
  Vec3 position = Vec3::Zero();
  Quat rotation = Quat::Identity();
  Vec3 log_scale = Vec3::Zero();
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Zero();  // linear RGB in [0,1]

  double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Sigma = R diag(exp(2 log_scale)) R^T, symmetric positive definite.
Mat3 covariance_3d(const GaussianPrimitive& g);

struct MapMetadata {
  uint64_t seed = 0;
  std::string source_dataset;
  std::string config_tag;
};

struct GaussianMap {
  std::vector<GaussianPrimitive> primitives;
  Vec3 background_color = Vec3::Zero();
  MapMetadata metadata;
};

// Drops primitives with opacity < min_opacity; survivor order preserved.
GaussianMap prune(const GaussianMap& map, double min_opacity);

// Binary little-endian PLY with per-vertex float32 properties
// (x y z rot_w rot_x rot_y rot_z log_scale_{xyz} opacity_logit red green blue)
// and comment lines carrying the format version, background color and
// metadata. Parameters are quantized to float32 on save.
void save_map(const GaussianMap& map, const std::string& path);
GaussianMap load_map(const std::string& path);

}  // namespace gsloc

#endif
