#include <doctest.h>

#include <cmath>
#include <random>

#include "gsloc/optimizer.hpp"

using namespace gsloc;

namespace {

GaussianPrimitive splat(const Vec3& pos, const Vec3& sigma, double opacity,
                        const Vec3& color, const Quat& q = Quat::Identity()) {
  GaussianPrimitive g;
  g.position = pos;
  g.rotation = q;
  g.log_scale = sigma.array().log();
  g.opacity_logit = logit(opacity);
  g.color = color;
  return g;
}

// Small well-conditioned instance: three splats over an 8x8 frame.
GaussianMap three_splat_map() {
  GaussianMap map;
  map.background_color = Vec3(0.05, 0.05, 0.1);
  map.primitives.push_back(splat(Vec3(-0.05, 0.02, 1.0), Vec3(0.08, 0.05, 0.06),
                                 0.8, Vec3(0.9, 0.2, 0.1),
                                 Quat(0.9, 0.2, -0.1, 0.3).normalized()));
  map.primitives.push_back(splat(Vec3(0.06, -0.04, 1.4), Vec3(0.1, 0.07, 0.09),
                                 0.6, Vec3(0.1, 0.8, 0.3),
                                 Quat(0.8, -0.3, 0.2, 0.1).normalized()));
  map.primitives.push_back(splat(Vec3(0.0, 0.05, 1.9), Vec3(0.12, 0.1, 0.08),
                                 0.7, Vec3(0.2, 0.3, 0.9),
                                 Quat(0.7, 0.1, 0.4, -0.2).normalized()));
  return map;
}

PinholeIntrinsics tiny_K() { return PinholeIntrinsics{30, 30, 4, 4, 8, 8}; }

TrainView gray_view() {
  TrainView v;
  v.intrinsics = tiny_K();
  v.image = Image(8, 8, 3);
  for (double& p : v.image.data) p = 0.5;
  v.depth = Image(8, 8, 1);
  for (double& d : v.depth.data) d = 1.5;
  return v;
}

double forward_total(const GaussianMap& map, const TrainView& view,
                     const OptimConfig& cfg) {
  return render_backward(map, view, cfg).total;
}

// Central finite difference against the analytic gradient; `set` perturbs one
// scalar coordinate of the map.
void check_fd(GaussianMap map, const TrainView& view, const OptimConfig& cfg,
              double analytic, const std::function<double&(GaussianMap&)>& coord) {
  const double h = 1e-5;
  GaussianMap plus = map, minus = map;
  coord(plus) += h;
  coord(minus) -= h;
  const double fd =
      (forward_total(plus, view, cfg) - forward_total(minus, view, cfg)) / (2 * h);
  CHECK(std::abs(analytic - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
}

double psnr_of(const Image& a, const Image& b) {
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= double(a.data.size());
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace

TEST_CASE("photometric loss: identity, constant offset, empty mask") {
  Image a(4, 3, 3), b(4, 3, 3), mask(4, 3, 1);
  for (double& v : mask.data) v = 1.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = 0.3;
    b.data[i] = 0.3;
  }
  CHECK(photometric_loss(a, b, mask) == 0.0);
  for (double& v : b.data) v += 0.1;
  CHECK(photometric_loss(a, b, mask) == doctest::Approx(0.1).epsilon(1e-12));
  Image empty(4, 3, 1);
  CHECK_THROWS_AS(photometric_loss(a, b, empty), EmptyMask);
}

TEST_CASE("depth loss: support rules and direct mean") {
  Image rd(4, 2, 1), od(4, 2, 1), alpha(4, 2, 1);
  for (double& v : rd.data) v = 2.0;
  for (double& v : od.data) v = 1.5;
  for (double& v : alpha.data) v = 0.9;
  auto r = depth_loss(rd, od, alpha);
  CHECK(r.loss == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.support == 8);

  od = rd;
  CHECK(depth_loss(rd, od, alpha).loss == 0.0);

  for (double& v : od.data) v = 0.0;  // all invalid
  r = depth_loss(rd, od, alpha);
  CHECK(r.loss == 0.0);
  CHECK(r.support == 0);

  for (double& v : od.data) v = 1.0;
  for (double& v : alpha.data) v = 0.2;  // background-dominated pixels excluded
  CHECK(depth_loss(rd, od, alpha).support == 0);
}

TEST_CASE("zero residual gives zero gradients") {
  const GaussianMap map = three_splat_map();
  OptimConfig cfg;
  cfg.lambda_depth = 0.5;
  TrainView v = gray_view();
  RenderConfig rcfg = cfg.render;
  rcfg.antialias_enabled = cfg.antialias_enabled;
  const RenderedFrame f = render(map, v.pose, v.intrinsics, rcfg);
  v.image = f.color;
  v.depth = Image(8, 8, 1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      v.depth.at(x, y) = f.alpha.at(x, y) > 0.5 ? f.depth.at(x, y) : 0.0;

  const BackwardResult bw = render_backward(map, v, cfg);
  CHECK(bw.total <= 1e-12);
  for (size_t i = 0; i < map.primitives.size(); ++i) {
    CHECK(bw.grads.position[i].norm() <= 1e-12);
    CHECK(bw.grads.rotation[i].norm() <= 1e-12);
    CHECK(bw.grads.log_scale[i].norm() <= 1e-12);
    CHECK(std::abs(bw.grads.opacity_logit[i]) <= 1e-12);
    CHECK(bw.grads.color[i].norm() <= 1e-12);
  }
  CHECK(bw.exposure_grad.norm() <= 1e-12);
}

TEST_CASE("analytic gradients match central finite differences") {
  const GaussianMap map = three_splat_map();
  const TrainView view = gray_view();

  OptimConfig cfg;
  cfg.lambda_depth = 0.5;

  SUBCASE("without anti-aliasing") { cfg.antialias_enabled = false; }
  SUBCASE("with anti-aliasing") { cfg.antialias_enabled = true; }

  const BackwardResult bw = render_backward(map, view, cfg);
  REQUIRE(bw.total > 0);

  for (size_t i = 0; i < map.primitives.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      check_fd(map, view, cfg, bw.grads.position[i](k),
               [i, k](GaussianMap& m) -> double& { return m.primitives[i].position(k); });
      check_fd(map, view, cfg, bw.grads.log_scale[i](k),
               [i, k](GaussianMap& m) -> double& { return m.primitives[i].log_scale(k); });
      check_fd(map, view, cfg, bw.grads.color[i](k),
               [i, k](GaussianMap& m) -> double& { return m.primitives[i].color(k); });
    }
    check_fd(map, view, cfg, bw.grads.rotation[i](0),
             [i](GaussianMap& m) -> double& { return m.primitives[i].rotation.w(); });
    for (int k = 0; k < 3; ++k)
      check_fd(map, view, cfg, bw.grads.rotation[i](1 + k),
               [i, k](GaussianMap& m) -> double& {
                 return m.primitives[i].rotation.coeffs()(k);
               });
    check_fd(map, view, cfg, bw.grads.opacity_logit[i],
             [i](GaussianMap& m) -> double& { return m.primitives[i].opacity_logit; });
  }
}

TEST_CASE("exposure gradient matches finite differences") {
  const GaussianMap map = three_splat_map();
  TrainView view = gray_view();
  view.exposure.matrix.leftCols<3>() = 1.1 * Mat3::Identity();
  view.exposure.matrix.col(3) = Vec3(0.02, -0.01, 0.03);

  OptimConfig cfg;
  cfg.exposure_enabled = true;
  cfg.lambda_depth = 0.0;

  const BackwardResult bw = render_backward(map, view, cfg);
  const double h = 1e-5;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) {
      TrainView plus = view, minus = view;
      plus.exposure.matrix(r, c) += h;
      minus.exposure.matrix(r, c) -= h;
      const double fd =
          (forward_total(map, plus, cfg) - forward_total(map, minus, cfg)) / (2 * h);
      CHECK(std::abs(bw.exposure_grad(r, c) - fd) <=
            1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("occluded splat receives (near) zero color gradient") {
  GaussianMap map;
  map.background_color = Vec3::Zero();
  // Three near-opaque front splats drive transmittance below the early-stop
  // threshold everywhere, so the rear splat never composites.
  for (double z : {0.95, 1.0, 1.05})
    map.primitives.push_back(splat(Vec3(0, 0, z), Vec3::Constant(0.3), 0.9999,
                                   Vec3(1, 1, 1)));
  map.primitives.push_back(splat(Vec3(0, 0, 2), Vec3::Constant(0.3), 0.9,
                                 Vec3(1, 0, 0)));
  TrainView v;
  v.intrinsics = PinholeIntrinsics{30, 30, 2, 2, 4, 4};
  v.image = Image(4, 4, 3);
  for (double& p : v.image.data) p = 0.5;
  v.depth = Image(4, 4, 1);
  OptimConfig cfg;
  cfg.lambda_depth = 0;
  const BackwardResult bw = render_backward(map, v, cfg);
  CHECK(bw.grads.color[0].norm() > 1e-6);
  CHECK(bw.grads.color[3].norm() <= cfg.render.transmittance_stop);
}

TEST_CASE("gradients are identical across thread counts") {
  const GaussianMap map = three_splat_map();
  const TrainView view = gray_view();
  OptimConfig c1, c4;
  c1.render.threads = 1;
  c4.render.threads = 4;
  const BackwardResult a = render_backward(map, view, c1);
  const BackwardResult b = render_backward(map, view, c4);
  for (size_t i = 0; i < map.primitives.size(); ++i) {
    CHECK(a.grads.position[i] == b.grads.position[i]);
    CHECK(a.grads.rotation[i] == b.grads.rotation[i]);
    CHECK(a.grads.log_scale[i] == b.grads.log_scale[i]);
    CHECK(a.grads.opacity_logit[i] == b.grads.opacity_logit[i]);
    CHECK(a.grads.color[i] == b.grads.color[i]);
  }
}

TEST_CASE("ground-truth init is a fixed point of optimization") {
  const GaussianMap map = three_splat_map();
  OptimConfig cfg;
  cfg.iterations = 5;
  RenderConfig rcfg = cfg.render;
  rcfg.antialias_enabled = cfg.antialias_enabled;

  std::vector<TrainView> views;
  for (double dx : {-0.03, 0.0, 0.03}) {
    TrainView v = gray_view();
    v.pose = CameraPose(Quat::Identity(), Vec3(dx, 0, 0));
    const RenderedFrame f = render(map, v.pose, v.intrinsics, rcfg);
    v.image = f.color;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        v.depth.at(x, y) = f.alpha.at(x, y) > 0.5 ? f.depth.at(x, y) : 0.0;
    views.push_back(v);
  }
  const OptimizeResult res = optimize_map(map, views, cfg);
  REQUIRE(res.history.size() == 5);
  for (const auto& rec : res.history)
    CHECK(std::abs(rec.total - res.history.front().total) <= 1e-6);
}

TEST_CASE("optimization recovers a perturbed map (held-out PSNR +3dB)") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 0.02);
  GaussianMap gt;
  gt.background_color = Vec3(0.1, 0.1, 0.1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 25; ++i)
    gt.primitives.push_back(splat(
        Vec3(0.8 * (u(rng) - 0.5), 0.8 * (u(rng) - 0.5), 1.0 + u(rng)),
        Vec3(0.05 + 0.08 * u(rng), 0.05 + 0.08 * u(rng), 0.05 + 0.08 * u(rng)),
        0.3 + 0.6 * u(rng), Vec3(u(rng), u(rng), u(rng)),
        Quat(u(rng), u(rng), u(rng), u(rng)).normalized()));

  PinholeIntrinsics K{40, 40, 12, 9, 24, 18};
  OptimConfig cfg;
  cfg.iterations = 200;
  cfg.prune_interval = 0;
  RenderConfig rcfg = cfg.render;
  rcfg.antialias_enabled = cfg.antialias_enabled;

  std::vector<TrainView> views;
  std::vector<CameraPose> poses;
  for (int i = 0; i < 7; ++i)
    poses.push_back(CameraPose(
        Quat(1.0, 0.02 * (u(rng) - 0.5), 0.02 * (u(rng) - 0.5), 0).normalized(),
        Vec3(0.1 * (u(rng) - 0.5), 0.1 * (u(rng) - 0.5), 0.05 * u(rng))));
  for (int i = 0; i < 6; ++i) {
    TrainView v;
    v.intrinsics = K;
    v.pose = poses[i];
    const RenderedFrame f = render(gt, v.pose, K, rcfg);
    v.image = f.color;
    v.depth = Image(K.width, K.height, 1);
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x)
        v.depth.at(x, y) = f.alpha.at(x, y) > 0.5 ? f.depth.at(x, y) : 0.0;
    views.push_back(v);
  }
  const RenderedFrame holdout_gt = render(gt, poses[6], K, rcfg);

  GaussianMap init = gt;
  for (auto& g : init.primitives) g.position += Vec3(n(rng), n(rng), n(rng));

  const double psnr_before =
      psnr_of(render(init, poses[6], K, rcfg).color, holdout_gt.color);
  const OptimizeResult res = optimize_map(init, views, cfg);
  const double psnr_after =
      psnr_of(render(res.map, poses[6], K, rcfg).color, holdout_gt.color);
  CHECK(psnr_after >= psnr_before + 3.0);
  CHECK(res.history.back().total < res.history.front().total);
}

TEST_CASE("optimize_map is deterministic given the seed") {
  const GaussianMap map = three_splat_map();
  std::vector<TrainView> views;
  TrainView v = gray_view();
  views.push_back(v);
  OptimConfig cfg;
  cfg.iterations = 10;
  cfg.seed = 3;
  const OptimizeResult a = optimize_map(map, views, cfg);
  const OptimizeResult b = optimize_map(map, views, cfg);
  REQUIRE(a.map.primitives.size() == b.map.primitives.size());
  for (size_t i = 0; i < a.map.primitives.size(); ++i) {
    CHECK(a.map.primitives[i].position == b.map.primitives[i].position);
    CHECK(a.map.primitives[i].rotation.coeffs() == b.map.primitives[i].rotation.coeffs());
    CHECK(a.map.primitives[i].log_scale == b.map.primitives[i].log_scale);
    CHECK(a.map.primitives[i].opacity_logit == b.map.primitives[i].opacity_logit);
    CHECK(a.map.primitives[i].color == b.map.primitives[i].color);
  }
}

TEST_CASE("pruning removes transparent primitives during optimization") {
  GaussianMap map = three_splat_map();
  // Transparent splat far from the frustum: no gradient, pruned at iter 1.
  map.primitives.push_back(splat(Vec3(50, 50, 50), Vec3::Constant(0.05), 0.001,
                                 Vec3(1, 1, 1)));
  std::vector<TrainView> views{gray_view()};
  OptimConfig cfg;
  cfg.iterations = 2;
  cfg.prune_interval = 1;
  const OptimizeResult res = optimize_map(map, views, cfg);
  CHECK(res.map.primitives.size() == 3);
}

TEST_CASE("non-finite loss raises Diverged") {
  const GaussianMap map = three_splat_map();
  TrainView v = gray_view();
  v.image.at(3, 3, 1) = std::numeric_limits<double>::quiet_NaN();
  OptimConfig cfg;
  cfg.iterations = 3;
  CHECK_THROWS_AS(optimize_map(map, {v}, cfg), Diverged);
}
