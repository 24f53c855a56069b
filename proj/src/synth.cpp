#include "gsloc/synth.hpp"

#include <random>

namespace gsloc {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform double in [0,1) from a counter-free generator state.
double uniform01(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;
}

double lattice(int64_t x, int64_t y, int64_t z, uint64_t seed) {
  uint64_t h = splitmix64(seed ^ splitmix64(uint64_t(x) * 0x8da6b343ULL ^
                                            uint64_t(y) * 0xd8163841ULL ^
                                            uint64_t(z) * 0xcb1ab31fULL));
  return double(h >> 11) * 0x1.0p-52 - 1.0;  // [-1, 1)
}

double smooth(double t) { return t * t * (3 - 2 * t); }

}  // namespace

uint64_t mix_seed(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x51ab5e5eULL));
}

double value_noise(const Vec3& p, uint64_t seed) {
  const int64_t x0 = int64_t(std::floor(p.x())), y0 = int64_t(std::floor(p.y())),
                z0 = int64_t(std::floor(p.z()));
  const double fx = smooth(p.x() - x0), fy = smooth(p.y() - y0),
               fz = smooth(p.z() - z0);
  double v = 0;
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
        v += w * lattice(x0 + dx, y0 + dy, z0 + dz, seed);
      }
  return v;
}

SceneSpec default_scene(uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  const Vec3 e = spec.extent;
  const double t = 0.1;  // slab thickness
  spec.boxes = {
      // floor
      {{e.x() / 2, e.y() / 2, -t / 2}, {e.x(), e.y(), t}, {0.45, 0.42, 0.38}, 2.0},
      // walls
      {{e.x() / 2, -t / 2, e.z() / 2}, {e.x(), t, e.z()}, {0.55, 0.50, 0.40}, 2.0},
      {{e.x() / 2, e.y() + t / 2, e.z() / 2}, {e.x(), t, e.z()}, {0.40, 0.48, 0.55}, 2.0},
      {{-t / 2, e.y() / 2, e.z() / 2}, {t, e.y(), e.z()}, {0.52, 0.38, 0.35}, 2.0},
      {{e.x() + t / 2, e.y() / 2, e.z() / 2}, {t, e.y(), e.z()}, {0.35, 0.52, 0.40}, 2.0},
      // crates and a workbench off the center line
      {{2.5, 1.6, 0.5}, {1.0, 1.0, 1.0}, {0.60, 0.35, 0.20}, 3.0},
      {{5.5, 6.4, 0.75}, {1.2, 1.0, 1.5}, {0.25, 0.45, 0.60}, 3.0},
      {{9.0, 1.8, 0.6}, {1.4, 0.8, 1.2}, {0.55, 0.55, 0.25}, 3.0},
      {{10.2, 6.2, 0.5}, {0.8, 0.8, 1.0}, {0.35, 0.25, 0.55}, 3.0},
  };
  return spec;
}

GaussianMap generate_scene(const SceneSpec& spec) {
  GaussianMap map;
  map.background_color = Vec3(0.02, 0.02, 0.03);
  map.metadata.seed = spec.seed;
  map.metadata.source_dataset = "synthetic";

  // Face definitions: normal axis and the two tangent axes.
  struct Face {
    int normal_axis;
    double sign;
  };
  const Face faces[6] = {{0, -1}, {0, 1}, {1, -1}, {1, 1}, {2, -1}, {2, 1}};

  std::mt19937_64 rng(splitmix64(spec.seed));
  for (size_t bi = 0; bi < spec.boxes.size(); ++bi) {
    const auto& box = spec.boxes[bi];
    for (const auto& face : faces) {
      const int na = face.normal_axis;
      const int ta = (na + 1) % 3, tb = (na + 2) % 3;
      const double len_a = box.size(ta), len_b = box.size(tb);
      const double area = len_a * len_b;
      const int count = int(std::lround(area * spec.gaussians_per_m2));
      if (count <= 0) continue;

      // Jittered grid for even coverage.
      const int nu = std::max(1, int(std::lround(std::sqrt(count * len_a / len_b))));
      const int nv = std::max(1, (count + nu - 1) / nu);
      const double spacing = std::sqrt(area / double(nu * nv));
      const double tangent_sigma = 0.65 * spacing;

      Vec3 normal = Vec3::Zero(), tu = Vec3::Zero(), tv = Vec3::Zero();
      normal(na) = face.sign;
      tu(ta) = 1;
      tv(tb) = 1;
      // Right-handed frame (tu, tv, n).
      if (tu.cross(tv).dot(normal) < 0) tv = -tv;
      Mat3 R;
      R.col(0) = tu;
      R.col(1) = tv;
      R.col(2) = normal;

      const Quat q(R);
      int emitted = 0;
      for (int iu = 0; iu < nu && emitted < count; ++iu)
        for (int iv = 0; iv < nv && emitted < count; ++iv, ++emitted) {
          const double u = (iu + 0.2 + 0.6 * uniform01(rng)) / nu - 0.5;
          const double v = (iv + 0.2 + 0.6 * uniform01(rng)) / nv - 0.5;
          GaussianPrimitive g;
          g.position = box.center;
          g.position(ta) += u * len_a;
          g.position(tb) += v * len_b;
          g.position(na) += face.sign * box.size(na) / 2;
          g.rotation = q;
          g.rotation.normalize();
          if (g.rotation.w() < 0) g.rotation.coeffs() = -g.rotation.coeffs();
          const double sig = tangent_sigma * (0.85 + 0.3 * uniform01(rng));
          g.log_scale = Vec3(std::log(sig), std::log(sig), std::log(sig / 10));
          g.opacity_logit = 2.5 + 1.5 * uniform01(rng);  // opacity ~0.92..0.98
          const uint64_t noise_seed = mix_seed(spec.seed, 1234);
          for (int c = 0; c < 3; ++c) {
            const Vec3 pc = g.position * box.texture_frequency + Vec3(17.0 * c, 29.0 * c, 41.0 * c);
            const double n = 0.7 * value_noise(pc, noise_seed) +
                             0.3 * value_noise(2.7 * pc, noise_seed + 5);
            g.color(c) = std::clamp(box.base_color(c) * (1.0 + 0.55 * n), 0.0, 1.0);
          }
          map.primitives.push_back(g);
        }
    }
  }
  return map;
}

std::vector<TimedPose> generate_trajectory(const TrajectorySpec& spec,
                                           const SceneSpec& scene) {
  if (spec.waypoints.size() < 2)
    throw WaypointOutsideScene("trajectory needs at least 2 waypoints");
  for (const auto& w : spec.waypoints) {
    if (w.x() < 0 || w.x() > scene.extent.x() || w.y() < 0 ||
        w.y() > scene.extent.y())
      throw WaypointOutsideScene("waypoint (" + std::to_string(w.x()) + ", " +
                                 std::to_string(w.y()) + ") outside scene");
  }
  if (spec.camera_height < 0 || spec.camera_height > scene.extent.z())
    throw WaypointOutsideScene("camera height outside scene");

  std::vector<Vec2> wps = spec.waypoints;
  if (spec.reverse) std::reverse(wps.begin(), wps.end());

  // Arc-length parameterization of the polyline.
  std::vector<double> cum{0.0};
  for (size_t i = 1; i < wps.size(); ++i)
    cum.push_back(cum.back() + (wps[i] - wps[i - 1]).norm());
  const double total = cum.back();

  auto point_at = [&](double s) -> Vec2 {
    s = std::clamp(s, 0.0, total);
    size_t i = 1;
    while (i + 1 < cum.size() && cum[i] < s) ++i;
    const double seg = cum[i] - cum[i - 1];
    const double t = seg > 0 ? (s - cum[i - 1]) / seg : 0.0;
    return wps[i - 1] + t * (wps[i] - wps[i - 1]);
  };

  const double step = spec.speed / spec.frame_rate;
  const int n = int(std::floor(total / step + 1e-9)) + 1;
  const double smooth_window = 0.25;  // meters, yaw smoothing at corners

  std::vector<TimedPose> traj;
  traj.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double s = std::min(double(i) * step, total);
    Vec2 dir2 = point_at(std::min(s + smooth_window, total)) -
                point_at(std::max(s - smooth_window, 0.0));
    if (dir2.norm() < 1e-12) dir2 = wps[1] - wps[0];
    dir2.normalize();

    Vec2 pos2 = point_at(s);
    // Lateral offset: +90 deg rotation of travel direction (to the left).
    pos2 += spec.lateral_offset * Vec2(-dir2.y(), dir2.x());

    Mat3 R;
    R.col(0) = Vec3(dir2.y(), -dir2.x(), 0);  // camera x: image right
    R.col(1) = Vec3(0, 0, -1);                // camera y: image down
    R.col(2) = Vec3(dir2.x(), dir2.y(), 0);   // camera z: forward
    TimedPose tp;
    tp.timestamp = double(i) / spec.frame_rate;
    tp.pose = CameraPose(Quat(R), Vec3(pos2.x(), pos2.y(), spec.camera_height));
    traj.push_back(tp);
  }
  return traj;
}

std::vector<TrainView> render_dataset(const GaussianMap& map,
                                      const std::vector<TimedPose>& trajectory,
                                      const PinholeIntrinsics& K,
                                      const DatasetPerturbations& pert,
                                      int threads) {
  const int ss = std::max(1, pert.supersample);

  RenderConfig rcfg;
  rcfg.threads = threads;
  // Simulated sensor PSF: the box downsample already contributes
  // (S^2-1)/(12 S^2) px^2 of blur at output resolution; the remainder is
  // applied as screen-space dilation at the supersampled resolution.
  const double box_var = (double(ss) * ss - 1.0) / (12.0 * ss * ss);
  const double extra = std::max(0.0, pert.psf_variance - box_var);
  rcfg.antialias_enabled = pert.psf_variance > 0.0 && extra > 0.0;
  rcfg.antialias_s = extra * ss * ss;
  PinholeIntrinsics Khi = K;
  if (ss > 1) {
    Khi.fx *= ss;
    Khi.fy *= ss;
    Khi.cx *= ss;
    Khi.cy *= ss;
    Khi.width *= ss;
    Khi.height *= ss;
  }

  std::vector<TrainView> views(trajectory.size());
  for (size_t i = 0; i < trajectory.size(); ++i) {
    const RenderedFrame frame = render(map, trajectory[i].pose, Khi, rcfg);
    TrainView v;
    v.pose = trajectory[i].pose;
    v.intrinsics = K;
    if (ss > 1) {
      v.image = downsample_box(frame.color, ss);
      // Validity-aware depth average: ignore empty samples.
      v.depth = Image(K.width, K.height, 1);
      for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x) {
          double sum = 0;
          int cnt = 0;
          for (int dy = 0; dy < ss; ++dy)
            for (int dx = 0; dx < ss; ++dx) {
              const double d = frame.depth.at(x * ss + dx, y * ss + dy);
              if (d > 0) {
                sum += d;
                ++cnt;
              }
            }
          v.depth.at(x, y) = cnt ? sum / cnt : 0.0;
        }
    } else {
      v.image = frame.color;
      v.depth = frame.depth;
    }

    if (pert.exposure) {
      std::mt19937_64 rng(mix_seed(pert.seed, i * 2 + 1));
      const double gain = 0.7 + 0.6 * (double(rng() >> 11) * 0x1.0p-53);
      const double bias = -0.05 + 0.1 * (double(rng() >> 11) * 0x1.0p-53);
      for (double& px : v.image.data) px = std::clamp(gain * px + bias, 0.0, 1.0);
    }
    if (pert.depth_noise > 0) {
      std::mt19937_64 rng(mix_seed(pert.seed, i * 2 + 2));
      std::normal_distribution<double> nd(0.0, 1.0);
      for (double& d : v.depth.data)
        if (d > 0) d = std::max(0.0, d + pert.depth_noise * d * d * nd(rng));
    }
    views[i] = std::move(v);
  }
  return views;
}

}  // namespace gsloc
