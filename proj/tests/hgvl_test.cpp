#include <doctest.h>

#include "gsloc/hgvl.hpp"
#include "gsloc/renderer.hpp"
#include "gsloc/synth.hpp"

using namespace gsloc;

namespace {

double rotation_error_deg(const Quat& a, const Quat& b) {
  return 2.0 * std::acos(std::min(1.0, std::abs(a.dot(b)))) * 180.0 / M_PI;
}

Quat facing_plus_x() {
  Mat3 R;
  R.col(0) = Vec3(0, -1, 0);
  R.col(1) = Vec3(0, 0, -1);
  R.col(2) = Vec3(1, 0, 0);
  return Quat(R);
}

Quat facing_minus_x() {
  Mat3 R;
  R.col(0) = Vec3(0, 1, 0);
  R.col(1) = Vec3(0, 0, -1);
  R.col(2) = Vec3(-1, 0, 0);
  return Quat(R);
}

// Axis-aligned plane patch covered with small splats colored by a random
// high-contrast checker keyed on cell indices: sharp, aperiodic corners the
// detector localizes to a fraction of a pixel.
void add_plane(GaussianMap& map, int na, double coord, double u0, double u1,
               double v0, double v1, double spacing, double cell,
               uint64_t seed) {
  const int ua = (na + 1) % 3, va = (na + 2) % 3;
  Vec3 ls;
  ls[na] = std::log(spacing * 0.1);
  ls[ua] = std::log(spacing * 0.55);
  ls[va] = std::log(spacing * 0.55);
  for (double u = u0 + spacing / 2; u < u1; u += spacing)
    for (double v = v0 + spacing / 2; v < v1; v += spacing) {
      GaussianPrimitive g;
      g.position[na] = coord;
      g.position[ua] = u;
      g.position[va] = v;
      g.log_scale = ls;
      g.opacity_logit = logit(0.995);
      const int64_t ci = int64_t(std::floor(u / cell));
      const int64_t cj = int64_t(std::floor(v / cell));
      const uint64_t h =
          mix_seed(seed, mix_seed(uint64_t(ci) * 2654435761u, uint64_t(cj)));
      g.color = Vec3((h & 1) ? 0.9 : 0.1, (h & 2) ? 0.9 : 0.1, (h & 4) ? 0.9 : 0.1);
      map.primitives.push_back(g);
    }
}

struct Fixture {
  GaussianMap map;
  PinholeIntrinsics K{240, 240, 120, 90, 240, 180};
  RenderConfig rcfg;
  ReferenceDatabase db;
  std::vector<CameraPose> ref_poses;

  Fixture() {
    map.background_color = Vec3(0.02, 0.02, 0.03);
    // Checker-textured wall at x = 5 with two box faces in front of it for
    // depth variety, and a featureless wall at x = 0 for the degenerate query.
    add_plane(map, 0, 5.0, 0.5, 5.5, 0.2, 2.4, 0.02, 0.10, 11);
    add_plane(map, 0, 4.3, 2.0, 2.7, 0.4, 1.6, 0.015, 0.08, 22);
    add_plane(map, 0, 4.5, 3.3, 4.0, 0.4, 1.8, 0.015, 0.08, 33);
    add_plane(map, 0, 0.0, 0.5, 5.5, 0.2, 2.4, 0.05, 100.0, 44);
    // Lateral grid of reference poses looking at the textured wall (+x) from
    // ~1.5 m: lateral baselines give the triangulation stage usable ray
    // angles and the short range keeps point depth well conditioned.
    std::vector<ReferenceView> refs;
    for (double x : {3.3, 3.5})
      for (double y : {2.7, 2.8, 2.9, 3.0, 3.1, 3.2, 3.3}) {
        ReferenceView rv;
        rv.pose = CameraPose(facing_plus_x(), Vec3(x, y, 1.2));
        rv.intrinsics = K;
        const RenderedFrame f = render(map, rv.pose, K, rcfg);
        rv.image = f.color;
        rv.depth = f.depth;
        refs.push_back(std::move(rv));
        ref_poses.push_back(refs.back().pose);
      }
    HgvlConfig cfg;
    cfg.threads = 4;
    db = build_reference_database(refs, cfg);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("status strings round trip") {
  for (LocStatus s : {LocStatus::kSuccess, LocStatus::kRetrievalFailed,
                      LocStatus::kInsufficientMatches, LocStatus::kRansacFailed})
    CHECK(loc_status_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(loc_status_from_string("nonsense"), std::invalid_argument);
}

TEST_CASE("reference database preserves poses and is thread-count invariant") {
  const Fixture& fx = fixture();
  REQUIRE(fx.db.poses.size() == fx.ref_poses.size());
  REQUIRE(fx.db.features.size() == fx.ref_poses.size());
  for (size_t i = 0; i < fx.ref_poses.size(); ++i) {
    CHECK(fx.db.poses[i].translation == fx.ref_poses[i].translation);
    CHECK(!fx.db.features[i].local.keypoints.empty());
  }

  // Rebuild two of the views single-threaded: identical features.
  std::vector<ReferenceView> two;
  for (int i : {0, 7}) {
    ReferenceView rv;
    rv.pose = fx.ref_poses[i];
    rv.intrinsics = fx.K;
    const RenderedFrame f = render(fx.map, rv.pose, fx.K, fx.rcfg);
    rv.image = f.color;
    rv.depth = f.depth;
    two.push_back(std::move(rv));
  }
  HgvlConfig cfg;
  cfg.threads = 1;
  const ReferenceDatabase small = build_reference_database(two, cfg);
  CHECK(small.features[0].global.v == fx.db.features[0].global.v);
  CHECK(small.features[1].local.descriptors == fx.db.features[7].local.descriptors);
}

TEST_CASE("held-out rendered query localizes to high precision") {
  const Fixture& fx = fixture();
  const CameraPose gt(facing_plus_x(), Vec3(3.4, 3.05, 1.2));
  const RenderedFrame qf = render(fx.map, gt, fx.K, fx.rcfg);

  HgvlConfig cfg;
  const LocalizationResult res = localize_hgvl(qf.color, fx.db, fx.K, cfg);
  REQUIRE(res.status == LocStatus::kSuccess);
  CHECK(res.num_3d_points > 0);
  CHECK(res.inlier_count >= 12);
  CHECK(res.elapsed_ms > 0);
  CHECK(rotation_error_deg(res.pose.rotation, gt.rotation) < 0.1);
  CHECK((res.pose.translation - gt.translation).norm() < 0.005);
}

TEST_CASE("query identical to a reference view recovers that pose") {
  const Fixture& fx = fixture();
  const CameraPose gt = fx.ref_poses[7];
  const RenderedFrame qf = render(fx.map, gt, fx.K, fx.rcfg);

  HgvlConfig cfg;
  const LocalizationResult res = localize_hgvl(qf.color, fx.db, fx.K, cfg);
  REQUIRE(res.status == LocStatus::kSuccess);
  CHECK(rotation_error_deg(res.pose.rotation, gt.rotation) < 0.1);
  CHECK((res.pose.translation - gt.translation).norm() < 0.005);
}

TEST_CASE("localization is deterministic") {
  const Fixture& fx = fixture();
  const CameraPose gt(facing_plus_x(), Vec3(3.45, 2.95, 1.2));
  const RenderedFrame qf = render(fx.map, gt, fx.K, fx.rcfg);

  HgvlConfig cfg;
  const LocalizationResult a = localize_hgvl(qf.color, fx.db, fx.K, cfg);
  const LocalizationResult b = localize_hgvl(qf.color, fx.db, fx.K, cfg);
  CHECK(a.status == b.status);
  CHECK(a.pose.translation == b.pose.translation);
  CHECK(a.pose.rotation.coeffs() == b.pose.rotation.coeffs());
  CHECK(a.inlier_count == b.inlier_count);
  CHECK(a.num_3d_points == b.num_3d_points);
}

TEST_CASE("textureless close-up wall query reports insufficient matches") {
  const Fixture& fx = fixture();
  // 0.1 m from the featureless x = 0 wall: no corners, matching cannot
  // proceed.
  const CameraPose wall(facing_minus_x(), Vec3(0.11, 3.0, 1.2));
  const RenderedFrame qf = render(fx.map, wall, fx.K, fx.rcfg);

  HgvlConfig cfg;
  const LocalizationResult res = localize_hgvl(qf.color, fx.db, fx.K, cfg);
  CHECK(res.status == LocStatus::kInsufficientMatches);
}

TEST_CASE("empty reference database reports retrieval failure") {
  const Fixture& fx = fixture();
  ReferenceDatabase empty;
  empty.intrinsics = fx.K;
  const RenderedFrame qf =
      render(fx.map, CameraPose(facing_plus_x(), Vec3(3.4, 3.0, 1.2)), fx.K, fx.rcfg);
  HgvlConfig cfg;
  const LocalizationResult res = localize_hgvl(qf.color, empty, fx.K, cfg);
  CHECK(res.status == LocStatus::kRetrievalFailed);
}
