#include "gsloc/optimizer.hpp"

#include <numeric>
#include <random>

namespace gsloc {

double photometric_loss(const Image& rendered, const Image& observed,
                        const Image& mask) {
  size_t n = 0;
  double sum = 0;
  for (int y = 0; y < rendered.height; ++y)
    for (int x = 0; x < rendered.width; ++x) {
      if (mask.at(x, y) <= 0) continue;
      ++n;
      for (int c = 0; c < rendered.channels; ++c)
        sum += std::abs(rendered.at(x, y, c) - observed.at(x, y, c));
    }
  if (n == 0) throw EmptyMask();
  return sum / double(n * rendered.channels);
}

DepthLossValue depth_loss(const Image& rendered_depth,
                          const Image& observed_depth,
                          const Image& rendered_alpha) {
  DepthLossValue out;
  double sum = 0;
  for (int y = 0; y < rendered_depth.height; ++y)
    for (int x = 0; x < rendered_depth.width; ++x) {
      if (observed_depth.at(x, y) <= 0 || rendered_alpha.at(x, y) <= 0.5) continue;
      ++out.support;
      sum += std::abs(rendered_depth.at(x, y) - observed_depth.at(x, y));
    }
  out.loss = out.support ? sum / double(out.support) : 0.0;
  return out;
}

namespace {

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// dR/dq for a unit quaternion q = (w,x,y,z).
void quat_rotation_derivatives(const Quat& q, Mat3 dR[4]) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  dR[0] << 0, -z, y, z, 0, -x, -y, x, 0;           // d/dw
  dR[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;   // d/dx
  dR[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;   // d/dy
  dR[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;   // d/dz
  for (int k = 0; k < 4; ++k) dR[k] *= 2.0;
}

struct ScreenGrad {
  Vec2 dmu = Vec2::Zero();
  Mat2 dcov = Mat2::Zero();  // w.r.t. post-antialias covariance
  double dopacity = 0;       // w.r.t. post-antialias opacity
  Vec3 dcolor = Vec3::Zero();
  double dz = 0;
  bool touched = false;
};

// Chain one splat's screen-space gradients back to its primitive parameters.
void chain_to_primitive(const GaussianPrimitive& g, const CameraPose& pose,
                        const PinholeIntrinsics& K, double aa_s,
                        const ScreenGrad& sg, size_t idx, MapGradients& out) {
  const Vec3 pc = pose.world_to_camera(g.position);
  const Mat3 W = pose.rotation.conjugate().toRotationMatrix();
  const Eigen::Matrix<double, 2, 3> J = projection_jacobian(pc, K);
  const Quat qn = g.rotation.normalized();
  const Mat3 R = qn.toRotationMatrix();
  const Vec3 s3 = g.log_scale.array().exp();
  const Mat3 M2 = R * s3.asDiagonal();
  const Mat3 sigma_w = covariance_3d(g);
  const Mat3 M = W * sigma_w * W.transpose();
  Mat2 sigma = J * M * J.transpose();
  sigma = 0.5 * (sigma + sigma.transpose()).eval();

  const double opacity = g.opacity();
  Mat2 d_sigma = 0.5 * (sg.dcov + sg.dcov.transpose());
  double d_opacity = sg.dopacity;
  if (aa_s > 0) {
    Mat2 sigma_aa = sigma;
    sigma_aa(0, 0) += aa_s;
    sigma_aa(1, 1) += aa_s;
    const double f =
        std::sqrt(std::max(sigma.determinant(), 0.0) / sigma_aa.determinant());
    d_sigma += (sg.dopacity * opacity * 0.5 * f) *
               (sigma.inverse() - sigma_aa.inverse());
    d_opacity = sg.dopacity * f;
  }

  // Through the projection Jacobian (which depends on the camera-frame mean).
  Vec3 d_pc = J.transpose() * sg.dmu;
  d_pc.z() += sg.dz;
  const Eigen::Matrix<double, 2, 3> dJ = 2.0 * d_sigma * J * M;
  const double z = pc.z(), iz2 = 1.0 / (z * z), iz3 = iz2 / z;
  d_pc.x() += dJ(0, 2) * (-K.fx * iz2);
  d_pc.y() += dJ(1, 2) * (-K.fy * iz2);
  d_pc.z() += dJ(0, 0) * (-K.fx * iz2) + dJ(1, 1) * (-K.fy * iz2) +
              dJ(0, 2) * (2 * K.fx * pc.x() * iz3) +
              dJ(1, 2) * (2 * K.fy * pc.y() * iz3);

  out.position[idx] += pose.rotation * d_pc;

  const Mat3 dM = J.transpose() * d_sigma * J;
  const Mat3 d_sigma_w = W.transpose() * dM * W;
  const Mat3 dM2 = 2.0 * d_sigma_w * M2;
  const Mat3 dR_grad = dM2 * s3.asDiagonal();
  const Mat3 RtdM2 = R.transpose() * dM2;
  for (int k = 0; k < 3; ++k)
    out.log_scale[idx](k) += RtdM2(k, k) * s3(k);

  Mat3 dRdq[4];
  quat_rotation_derivatives(qn, dRdq);
  Eigen::Vector4d dqn;
  for (int k = 0; k < 4; ++k) dqn(k) = dR_grad.cwiseProduct(dRdq[k]).sum();
  // Backprop through normalization of the stored quaternion.
  Eigen::Vector4d qraw(g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z());
  const double qnorm = qraw.norm();
  Eigen::Vector4d qhat(qn.w(), qn.x(), qn.y(), qn.z());
  out.rotation[idx] += (dqn - qhat * qhat.dot(dqn)) / qnorm;

  out.opacity_logit[idx] += d_opacity * opacity * (1.0 - opacity);
  out.color[idx] += sg.dcolor;
}

struct Contribution {
  int bin_pos;
  double w;
  double T;  // transmittance before this splat
  bool clamped;
};

}  // namespace

BackwardResult render_backward(const GaussianMap& map, const TrainView& view,
                               const OptimConfig& cfg) {
  RenderConfig rcfg = cfg.render;
  rcfg.antialias_enabled = cfg.antialias_enabled;
  const PinholeIntrinsics& K = view.intrinsics;

  BackwardResult res;
  res.grads.resize(map.primitives.size());

  const RenderedFrame frame = render(map, view.pose, K, rcfg);
  const Image exposed = cfg.exposure_enabled
                            ? apply_exposure(frame.color, view.exposure)
                            : frame.color;

  const size_t n_px = frame.color.pixel_count();
  const size_t n_mask = n_px;  // full-frame supervision

  // Pass 1: losses and the depth support count.
  double photo_sum = 0, depth_sum = 0;
  size_t support = 0;
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      for (int c = 0; c < 3; ++c)
        photo_sum += std::abs(exposed.at(x, y, c) - view.image.at(x, y, c));
      if (view.depth.at(x, y) > 0 && frame.alpha.at(x, y) > 0.5) {
        ++support;
        depth_sum += std::abs(frame.depth.at(x, y) - view.depth.at(x, y));
      }
    }
  res.photometric = photo_sum / double(n_mask * 3);
  res.depth.support = support;
  res.depth.loss = support ? depth_sum / double(support) : 0.0;
  res.total = res.photometric + cfg.lambda_depth * res.depth.loss;

  // Pass 2: per-pixel gradient images w.r.t. the raw composited channels.
  Image g_color(K.width, K.height, 3);   // dL/dC_raw
  Image g_draw(K.width, K.height, 1);    // dL/d(sum w T z)
  Image g_alpha(K.width, K.height, 1);   // dL/dalpha (via depth normalization)
  const Mat3 A = view.exposure.A();
  const double photo_norm = 1.0 / double(n_mask * 3);
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      const Vec3 c_raw(frame.color.at(x, y, 0), frame.color.at(x, y, 1),
                       frame.color.at(x, y, 2));
      Vec3 g;
      for (int c = 0; c < 3; ++c)
        g(c) = sgn(exposed.at(x, y, c) - view.image.at(x, y, c)) * photo_norm;
      if (cfg.exposure_enabled) {
        const Vec3 pre = A * c_raw + view.exposure.b();
        for (int c = 0; c < 3; ++c)
          if (pre(c) <= 0 || pre(c) >= 1) g(c) = 0;  // clamped channel
        res.exposure_grad.leftCols<3>() += g * c_raw.transpose();
        res.exposure_grad.col(3) += g;
        g = A.transpose() * g;
      }
      for (int c = 0; c < 3; ++c) g_color.at(x, y, c) = g(c);

      const double alpha = frame.alpha.at(x, y);
      if (support && view.depth.at(x, y) > 0 && alpha > 0.5) {
        const double gd = cfg.lambda_depth *
                          sgn(frame.depth.at(x, y) - view.depth.at(x, y)) /
                          double(support);
        g_draw.at(x, y) = gd / alpha;
        g_alpha.at(x, y) = -gd * frame.depth.at(x, y) / alpha;  // Draw/a^2 = D/a
      }
    }

  // Pass 3: re-walk compositing per tile, accumulate screen-space gradients.
  const auto splats = prepare_splats(map, view.pose, K, rcfg);
  const auto grid = bin_splats(splats, K, rcfg.tile_size);
  std::vector<Mat2> inv_cov(splats.size());
  for (size_t i = 0; i < splats.size(); ++i)
    inv_cov[i] = splats[i].cov2d.inverse();
  const Vec3 bg = map.background_color;

  const int tile_count = grid.tiles_x * grid.tiles_y;
  std::vector<std::vector<ScreenGrad>> tile_grads(tile_count);

  parallel_tiles(tile_count, rcfg.threads, [&](int t) {
    const auto& bin = grid.bins[t];
    if (bin.empty()) return;
    auto& acc = tile_grads[t];
    acc.assign(bin.size(), ScreenGrad{});
    const int tx = t % grid.tiles_x, ty = t / grid.tiles_x;
    const int x0 = tx * rcfg.tile_size, y0 = ty * rcfg.tile_size;
    const int x1 = std::min(K.width, x0 + rcfg.tile_size);
    const int y1 = std::min(K.height, y0 + rcfg.tile_size);
    std::vector<Contribution> contribs;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const Vec2 pix(x + 0.5, y + 0.5);
        contribs.clear();
        double T = 1.0;
        for (size_t bp = 0; bp < bin.size(); ++bp) {
          const auto& s = splats[bin[bp]];
          const Vec2 d = pix - s.mean2d;
          const double e = -0.5 * d.dot(inv_cov[bin[bp]] * d);
          if (e < -20) continue;
          double w = s.opacity * std::exp(e);
          const bool clamped = w >= 0.999;
          if (clamped) w = 0.999;
          if (w < rcfg.alpha_cutoff) continue;
          contribs.push_back({int(bp), w, T, clamped});
          T *= 1.0 - w;
          if (T < rcfg.transmittance_stop) break;
        }
        const double T_final = T;
        const Vec3 gc(g_color.at(x, y, 0), g_color.at(x, y, 1),
                      g_color.at(x, y, 2));
        const double gdraw = g_draw.at(x, y);
        const double galpha = g_alpha.at(x, y);

        Vec3 S_c = T_final * bg;
        double S_z = 0;
        for (int i = int(contribs.size()) - 1; i >= 0; --i) {
          const auto& ct = contribs[i];
          const auto& s = splats[bin[ct.bin_pos]];
          auto& a = acc[ct.bin_pos];
          a.touched = true;
          const double wT = ct.w * ct.T;
          a.dcolor += wT * gc;
          a.dz += gdraw * wT;
          if (!ct.clamped) {
            const double inv1w = 1.0 / (1.0 - ct.w);
            const Vec3 dCdw = ct.T * s.color - S_c * inv1w;
            const double dDdw = ct.T * s.depth - S_z * inv1w;
            const double dAdw = T_final * inv1w;
            const double gw = gc.dot(dCdw) + gdraw * dDdw + galpha * dAdw;
            const Vec2 d = pix - s.mean2d;
            const Vec2 v = inv_cov[bin[ct.bin_pos]] * d;
            a.dmu += (gw * ct.w) * v;
            a.dcov += (gw * ct.w * 0.5) * (v * v.transpose());
            a.dopacity += gw * (ct.w / s.opacity);
          }
          S_c += wT * s.color;
          S_z += wT * s.depth;
        }
      }
  });

  // Reduce per-tile gradients into per-splat accumulators in tile order.
  std::vector<ScreenGrad> splat_grads(splats.size());
  for (int t = 0; t < tile_count; ++t) {
    const auto& bin = grid.bins[t];
    const auto& acc = tile_grads[t];
    for (size_t bp = 0; bp < acc.size(); ++bp) {
      if (!acc[bp].touched) continue;
      auto& sg = splat_grads[bin[bp]];
      sg.dmu += acc[bp].dmu;
      sg.dcov += acc[bp].dcov;
      sg.dopacity += acc[bp].dopacity;
      sg.dcolor += acc[bp].dcolor;
      sg.dz += acc[bp].dz;
      sg.touched = true;
    }
  }

  const double aa_s = rcfg.antialias_enabled ? rcfg.antialias_s : 0.0;
  for (size_t i = 0; i < splats.size(); ++i) {
    if (!splat_grads[i].touched) continue;
    chain_to_primitive(map.primitives[splats[i].index], view.pose, K, aa_s,
                       splat_grads[i], size_t(splats[i].index), res.grads);
  }
  return res;
}

namespace {

struct AdamState {
  std::vector<double> m, v;
  void resize(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
};

constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-15;

void adam_step(double grad, double lr, double bias1, double bias2, double& m,
               double& v, double& param) {
  m = kBeta1 * m + (1 - kBeta1) * grad;
  v = kBeta2 * v + (1 - kBeta2) * grad * grad;
  const double mh = m / bias1, vh = v / bias2;
  param -= lr * mh / (std::sqrt(vh) + kAdamEps);
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

OptimizeResult optimize_map(const GaussianMap& init,
                            const std::vector<TrainView>& views,
                            const OptimConfig& cfg) {
  if (views.empty()) throw std::invalid_argument("optimize_map: no views");
  if (init.primitives.empty())
    throw std::invalid_argument("optimize_map: empty map");

  OptimizeResult out;
  out.map = init;
  out.exposures.assign(views.size(), ExposureAffine{});

  const size_t params_per_gaussian = 14;
  AdamState gauss_state;
  gauss_state.resize(init.primitives.size() * params_per_gaussian);
  AdamState expo_state;
  expo_state.resize(views.size() * 12);

  std::vector<int> order(views.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x6f70740aULL));
  auto reshuffle = [&] {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng() % i]);
  };
  reshuffle();

  const double min_log = std::log(1e-6), max_log = std::log(1e3);
  size_t epoch_pos = 0;
  int step_count = 0;  // per-parameter step count for bias correction
  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    if (epoch_pos >= order.size()) {
      epoch_pos = 0;
      reshuffle();
    }
    const int vi = order[epoch_pos++];

    auto work = views[vi];
    work.exposure = out.exposures[vi];
    const BackwardResult bw = render_backward(out.map, work, cfg);
    if (!std::isfinite(bw.total)) throw Diverged(iter);
    out.history.push_back({iter, bw.photometric, bw.depth.loss, bw.total});

    ++step_count;
    const double bias1 = 1.0 - std::pow(kBeta1, step_count);
    const double bias2 = 1.0 - std::pow(kBeta2, step_count);

    for (size_t i = 0; i < out.map.primitives.size(); ++i) {
      auto& g = out.map.primitives[i];
      double* m = &gauss_state.m[i * params_per_gaussian];
      double* v = &gauss_state.v[i * params_per_gaussian];
      for (int k = 0; k < 3; ++k)
        adam_step(bw.grads.position[i](k), cfg.lr_position, bias1, bias2, m[k],
                  v[k], g.position(k));
      double q[4] = {g.rotation.w(), g.rotation.x(), g.rotation.y(),
                     g.rotation.z()};
      for (int k = 0; k < 4; ++k)
        adam_step(bw.grads.rotation[i](k), cfg.lr_rotation, bias1, bias2,
                  m[3 + k], v[3 + k], q[k]);
      g.rotation = Quat(q[0], q[1], q[2], q[3]).normalized();
      for (int k = 0; k < 3; ++k) {
        adam_step(bw.grads.log_scale[i](k), cfg.lr_log_scale, bias1, bias2,
                  m[7 + k], v[7 + k], g.log_scale(k));
        g.log_scale(k) = std::clamp(g.log_scale(k), min_log, max_log);
      }
      adam_step(bw.grads.opacity_logit[i], cfg.lr_opacity, bias1, bias2, m[10],
                v[10], g.opacity_logit);
      for (int k = 0; k < 3; ++k) {
        adam_step(bw.grads.color[i](k), cfg.lr_color, bias1, bias2, m[11 + k],
                  v[11 + k], g.color(k));
        g.color(k) = std::clamp(g.color(k), 0.0, 1.0);
      }
    }

    if (cfg.exposure_enabled) {
      auto& e = out.exposures[vi];
      double* m = &expo_state.m[size_t(vi) * 12];
      double* v = &expo_state.v[size_t(vi) * 12];
      // Per-view exposure sees fewer updates; correct bias by its own count
      // would complicate state, the shared step count is adequate here.
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c)
          adam_step(bw.exposure_grad(r, c), cfg.lr_exposure, bias1, bias2,
                    m[r * 4 + c], v[r * 4 + c], e.matrix(r, c));
    }

    if (cfg.prune_interval > 0 && iter % cfg.prune_interval == 0) {
      std::vector<size_t> keep;
      keep.reserve(out.map.primitives.size());
      for (size_t i = 0; i < out.map.primitives.size(); ++i)
        if (out.map.primitives[i].opacity() >= cfg.prune_opacity)
          keep.push_back(i);
      if (keep.size() != out.map.primitives.size()) {
        GaussianMap pruned;
        pruned.background_color = out.map.background_color;
        pruned.metadata = out.map.metadata;
        AdamState new_state;
        new_state.m.reserve(keep.size() * params_per_gaussian);
        new_state.v.reserve(keep.size() * params_per_gaussian);
        for (size_t i : keep) {
          pruned.primitives.push_back(out.map.primitives[i]);
          for (size_t k = 0; k < params_per_gaussian; ++k) {
            new_state.m.push_back(gauss_state.m[i * params_per_gaussian + k]);
            new_state.v.push_back(gauss_state.v[i * params_per_gaussian + k]);
          }
        }
        out.map = std::move(pruned);
        gauss_state = std::move(new_state);
      }
    }
  }
  return out;
}

}  // namespace gsloc
