#include "gsloc/renderer.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <numeric>
#include <thread>

namespace gsloc {

Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p,
                                                const PinholeIntrinsics& K) {
  const double z = p.z(), iz = 1.0 / z, iz2 = iz * iz;
  Eigen::Matrix<double, 2, 3> J;
  J << K.fx * iz, 0, -K.fx * p.x() * iz2,
       0, K.fy * iz, -K.fy * p.y() * iz2;
  return J;
}

void apply_antialias(Mat2& cov2d, double& opacity, double s) {
  if (s <= 0) return;
  const double det0 = cov2d.determinant();
  cov2d(0, 0) += s;
  cov2d(1, 1) += s;
  const double det1 = cov2d.determinant();
  opacity *= std::sqrt(std::max(det0, 0.0) / det1);
}

std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g,
                                                  const CameraPose& pose,
                                                  const PinholeIntrinsics& K,
                                                  double z_near) {
  const Vec3 pc = pose.world_to_camera(g.position);
  // The local-affine (EWA) projection is only valid when the Gaussian's
  // support lies fully in front of the camera; splats straddling the near
  // plane would otherwise blanket the screen with a degenerate covariance.
  const double sigma_max = std::exp(g.log_scale.maxCoeff());
  if (pc.z() - 3.0 * sigma_max <= z_near) return std::nullopt;

  const Mat3 W = pose.rotation.conjugate().toRotationMatrix();
  const Eigen::Matrix<double, 2, 3> J = projection_jacobian(pc, K);
  const Mat3 cov_cam = W * covariance_3d(g) * W.transpose();

  ProjectedGaussian out;
  out.mean2d = Vec2(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
  out.cov2d = J * cov_cam * J.transpose();
  out.cov2d = 0.5 * (out.cov2d + out.cov2d.transpose()).eval();
  out.depth = pc.z();
  out.opacity = g.opacity();
  out.color = g.color;
  out.index = -1;
  out.radius = 0;
  return out;
}

namespace {

// Weight falls below the cutoff beyond r = sqrt(2 ln(opacity/cutoff)) standard
// deviations along the major axis, so binning by this radius cannot change
// which splats a pixel composites; that keeps frames tile-size invariant.
double cutoff_radius(const Mat2& cov, double opacity, double alpha_cutoff) {
  if (opacity <= alpha_cutoff) return 0;
  const double tr = cov.trace();
  const double det = cov.determinant();
  const double disc = std::sqrt(std::max(0.25 * tr * tr - det, 0.0));
  const double lambda_max = 0.5 * tr + disc;
  return std::sqrt(2.0 * std::log(opacity / alpha_cutoff) *
                   std::max(lambda_max, 0.0));
}

}  // namespace

std::vector<ProjectedGaussian> prepare_splats(const GaussianMap& map,
                                              const CameraPose& pose,
                                              const PinholeIntrinsics& K,
                                              const RenderConfig& cfg) {
  std::vector<ProjectedGaussian> splats;
  splats.reserve(map.primitives.size());
  const double s = cfg.antialias_enabled ? cfg.antialias_s : 0.0;
  for (size_t i = 0; i < map.primitives.size(); ++i) {
    auto p = project_gaussian(map.primitives[i], pose, K);
    if (!p) continue;
    apply_antialias(p->cov2d, p->opacity, s);
    p->index = int(i);
    p->radius = cutoff_radius(p->cov2d, std::min(p->opacity, 0.999), cfg.alpha_cutoff);
    if (p->radius <= 0) continue;
    // Screen-bounds cull.
    if (p->mean2d.x() + p->radius < 0 || p->mean2d.x() - p->radius > K.width ||
        p->mean2d.y() + p->radius < 0 || p->mean2d.y() - p->radius > K.height)
      continue;
    splats.push_back(*p);
  }
  std::stable_sort(splats.begin(), splats.end(),
                   [](const ProjectedGaussian& a, const ProjectedGaussian& b) {
                     if (a.depth != b.depth) return a.depth < b.depth;
                     return a.index < b.index;
                   });
  return splats;
}

TileGrid bin_splats(const std::vector<ProjectedGaussian>& splats,
                    const PinholeIntrinsics& K, int tile_size) {
  TileGrid grid;
  grid.tile_size = tile_size;
  grid.tiles_x = (K.width + tile_size - 1) / tile_size;
  grid.tiles_y = (K.height + tile_size - 1) / tile_size;
  grid.bins.assign(size_t(grid.tiles_x) * grid.tiles_y, {});
  for (size_t i = 0; i < splats.size(); ++i) {
    const auto& s = splats[i];
    const int tx0 = std::max(0, int((s.mean2d.x() - s.radius) / tile_size));
    const int tx1 = std::min(grid.tiles_x - 1, int((s.mean2d.x() + s.radius) / tile_size));
    const int ty0 = std::max(0, int((s.mean2d.y() - s.radius) / tile_size));
    const int ty1 = std::min(grid.tiles_y - 1, int((s.mean2d.y() + s.radius) / tile_size));
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        grid.bins[size_t(ty) * grid.tiles_x + tx].push_back(int(i));
  }
  return grid;
}

void parallel_tiles(int tile_count, int threads,
                    const std::function<void(int)>& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || tile_count <= 1) {
    for (int t = 0; t < tile_count; ++t) fn(t);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (int t = next.fetch_add(1); t < tile_count; t = next.fetch_add(1))
        fn(t);
    });
  for (auto& th : pool) th.join();
}

RenderedFrame render(const GaussianMap& map, const CameraPose& pose,
                     const PinholeIntrinsics& K, const RenderConfig& cfg) {
  RenderedFrame frame;
  frame.view_pose = pose;
  frame.intrinsics = K;
  frame.color = Image(K.width, K.height, 3);
  frame.depth = Image(K.width, K.height, 1);
  frame.alpha = Image(K.width, K.height, 1);

  const auto splats = prepare_splats(map, pose, K, cfg);
  const auto grid = bin_splats(splats, K, cfg.tile_size);
  const Vec3 bg = map.background_color;

  // Precompute inverse covariances once.
  std::vector<Mat2> inv_cov(splats.size());
  for (size_t i = 0; i < splats.size(); ++i)
    inv_cov[i] = splats[i].cov2d.inverse();

  const int tile_count = grid.tiles_x * grid.tiles_y;
  parallel_tiles(tile_count, cfg.threads, [&](int t) {
    const int tx = t % grid.tiles_x, ty = t / grid.tiles_x;
    const int x0 = tx * cfg.tile_size, y0 = ty * cfg.tile_size;
    const int x1 = std::min(K.width, x0 + cfg.tile_size);
    const int y1 = std::min(K.height, y0 + cfg.tile_size);
    const auto& bin = grid.bins[t];
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const Vec2 pix(x + 0.5, y + 0.5);
        double T = 1.0;
        Vec3 color = Vec3::Zero();
        double depth_acc = 0.0;
        for (int si : bin) {
          const auto& s = splats[si];
          const Vec2 d = pix - s.mean2d;
          const double e = -0.5 * d.dot(inv_cov[si] * d);
          if (e < -20) continue;  // exp underflow; below any usable cutoff
          double w = s.opacity * std::exp(e);
          if (w >= 0.999) w = 0.999;
          if (w < cfg.alpha_cutoff) continue;
          color += w * T * s.color;
          depth_acc += w * T * s.depth;
          T *= 1.0 - w;
          if (T < cfg.transmittance_stop) break;
        }
        const double alpha = 1.0 - T;
        color += T * bg;
        frame.color.at(x, y, 0) = color.x();
        frame.color.at(x, y, 1) = color.y();
        frame.color.at(x, y, 2) = color.z();
        frame.alpha.at(x, y) = alpha;
        frame.depth.at(x, y) = alpha > 0 ? depth_acc / std::max(alpha, 1e-6) : 0.0;
      }
    }
  });
  return frame;
}

Image apply_exposure(const Image& color, const ExposureAffine& e) {
  Image out(color.width, color.height, 3);
  const Mat3 A = e.A();
  const Vec3 b = e.b();
  for (int y = 0; y < color.height; ++y)
    for (int x = 0; x < color.width; ++x) {
      const Vec3 c(color.at(x, y, 0), color.at(x, y, 1), color.at(x, y, 2));
      const Vec3 cc = A * c + b;
      for (int k = 0; k < 3; ++k) out.at(x, y, k) = std::clamp(cc(k), 0.0, 1.0);
    }
  return out;
}

}  // namespace gsloc
