#ifndef GSLOC_SYNTH_HPP_
#define GSLOC_SYNTH_HPP_

#include "gsloc/optimizer.hpp"

namespace gsloc {

struct WaypointOutsideScene : std::runtime_error {
  explicit WaypointOutsideScene(const std::string& what)
      : std::runtime_error(what) {}
};

// Axis-aligned textured box; Gaussians are placed on its faces.
struct BoxSpec {
  Vec3 center;
  Vec3 size;
  Vec3 base_color;
  double texture_frequency = 2.0;  // value-noise cycles per meter
};

// World frame: z up, scene occupies [0, extent] in x/y and z.
struct SceneSpec {
  Vec3 extent = Vec3(12, 8, 3);
  std::vector<BoxSpec> boxes;
  double gaussians_per_m2 = 150;
  uint64_t seed = 1;
};

// Hall with floor, four walls and a few crates, per the default extent.
SceneSpec default_scene(uint64_t seed = 1);

// Surface-aligned anisotropic Gaussians (normal-axis scale 10x smaller),
// colored by procedural value noise. Deterministic given the seed.
GaussianMap generate_scene(const SceneSpec& spec);

struct TrajectorySpec {
  std::vector<Vec2> waypoints;  // x/y polyline inside the scene
  double speed = 1.0;           // m/s
  double frame_rate = 10.0;     // Hz
  double camera_height = 1.2;   // meters above the floor
  double lateral_offset = 0.0;  // meters, perpendicular to travel direction
  bool reverse = false;
};

// Camera faces the travel direction (x right, y down, z forward); yaw is
// smoothed near corners.
std::vector<TimedPose> generate_trajectory(const TrajectorySpec& spec,
                                           const SceneSpec& scene);

struct DatasetPerturbations {
  bool exposure = false;       // per-view gain in [0.7,1.3], bias in [-0.05,0.05]
  double depth_noise = 0.0;    // sigma = depth_noise * z^2
  int supersample = 1;         // render at N x resolution, box-downsample
  // Total sensor PSF variance in output px^2, including the box-downsample
  // contribution of (S^2-1)/(12 S^2); 0 disables the PSF entirely.
  double psf_variance = 0.0;
  uint64_t seed = 7;
};

// Ground-truth renders along the trajectory plus optional perturbations.
std::vector<TrainView> render_dataset(const GaussianMap& map,
                                      const std::vector<TimedPose>& trajectory,
                                      const PinholeIntrinsics& K,
                                      const DatasetPerturbations& pert,
                                      int threads = 1);

// Deterministic trilinear-interpolated lattice noise in [-1, 1].
double value_noise(const Vec3& p, uint64_t seed);

uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace gsloc

#endif
