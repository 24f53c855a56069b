#include <doctest.h>

#include <filesystem>
#include <random>

#include "gsloc/features.hpp"
#include "gsloc/synth.hpp"

using namespace gsloc;

namespace {

Image noise_image(int w, int h, uint64_t seed) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = 0.35 +
                          0.3 * value_noise(Vec3(0.11 * x, 0.13 * y, 1.7 * c), seed);
  return img;
}

double norm_of(const GlobalDescriptor& d) { return std::sqrt(d.dot(d)); }

BinaryDescriptor random_desc(std::mt19937_64& rng) {
  return {rng(), rng(), rng(), rng()};
}

}  // namespace

TEST_CASE("global descriptor is unit norm and brightness invariant") {
  const Image img = noise_image(96, 72, 3);
  const GlobalDescriptor d = global_descriptor(img);
  CHECK(std::abs(norm_of(d) - 1.0) <= 1e-9);

  Image brighter = img;
  for (double& v : brighter.data) v += 0.2;  // stays below 1: no clamping
  const GlobalDescriptor db = global_descriptor(brighter);
  double diff = 0;
  for (int i = 0; i < GlobalDescriptor::kDim; ++i)
    diff = std::max(diff, std::abs(double(d.v[i]) - db.v[i]));
  CHECK(diff <= 1e-6);
}

TEST_CASE("constant image yields a unit-norm descriptor with empty thumbnail") {
  Image img(64, 48, 3);
  for (double& v : img.data) v = 0.5;
  const GlobalDescriptor d = global_descriptor(img);
  CHECK(std::abs(norm_of(d) - 1.0) <= 1e-9);
  for (int i = 0; i < GlobalDescriptor::kThumb * GlobalDescriptor::kThumb; ++i)
    CHECK(std::abs(d.v[i]) <= 1e-9);
}

TEST_CASE("structurally different views have low similarity") {
  const GlobalDescriptor a = global_descriptor(noise_image(96, 72, 3));
  const GlobalDescriptor b = global_descriptor(noise_image(96, 72, 99));
  CHECK(a.dot(b) < 0.9);
}

TEST_CASE("retrieve_topk matches a brute-force sort oracle") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  auto random_descriptor = [&] {
    GlobalDescriptor d;
    double s = 0;
    for (auto& v : d.v) {
      v = float(n(rng));
      s += double(v) * v;
    }
    const float inv = float(1.0 / std::sqrt(s));
    for (auto& v : d.v) v *= inv;
    return d;
  };

  std::vector<std::pair<GlobalDescriptor, int>> db;
  for (int i = 0; i < 275; ++i) db.push_back({random_descriptor(), i});
  const GlobalDescriptor q = random_descriptor();

  const auto got = retrieve_topk(q, db, 10);
  REQUIRE(got.size() == 10);

  std::vector<int> oracle(db.size());
  for (size_t i = 0; i < db.size(); ++i) oracle[i] = int(i);
  std::stable_sort(oracle.begin(), oracle.end(), [&](int a, int b) {
    const double sa = q.dot(db[a].first), sb = q.dot(db[b].first);
    if (sa != sb) return sa > sb;
    return db[a].second < db[b].second;
  });
  for (int i = 0; i < 10; ++i) CHECK(got[i] == db[oracle[i]].second);

  // Self-retrieval ranks first.
  const auto self = retrieve_topk(db[42].first, db, 3);
  CHECK(self[0] == 42);

  // k beyond the database size clamps.
  CHECK(retrieve_topk(q, db, 1000).size() == db.size());

  // Ties break by ascending id.
  std::vector<std::pair<GlobalDescriptor, int>> dup{{db[0].first, 7},
                                                    {db[0].first, 2}};
  const auto tied = retrieve_topk(db[0].first, dup, 2);
  CHECK(tied[0] == 2);
  CHECK(tied[1] == 7);
}

TEST_CASE("detector finds checkerboard corners and nothing on flat input") {
  Image flat(64, 64, 3);
  for (double& v : flat.data) v = 0.4;
  CHECK(detect_and_describe(flat).keypoints.empty());

  // 8x8 checkerboard of 16 px squares: interior corners on the 16 px lattice.
  Image board(128, 128, 3);
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) {
      const double v = (((x / 16) + (y / 16)) % 2) ? 0.9 : 0.1;
      for (int c = 0; c < 3; ++c) board.at(x, y, c) = v;
    }
  const LocalFeatureSet fs = detect_and_describe(board);
  REQUIRE(fs.keypoints.size() == fs.descriptors.size());
  int near_corner = 0;
  for (const auto& kp : fs.keypoints) {
    CHECK(kp.u >= 0);
    CHECK(kp.u < 128);
    CHECK(kp.v >= 0);
    CHECK(kp.v < 128);
    const double du = std::abs(kp.u - 16.0 * std::round(kp.u / 16.0));
    const double dv = std::abs(kp.v - 16.0 * std::round(kp.v / 16.0));
    if (du <= 2.0 && dv <= 2.0) ++near_corner;
  }
  CHECK(near_corner >= 40);

  // Deterministic.
  const LocalFeatureSet again = detect_and_describe(board);
  REQUIRE(again.keypoints.size() == fs.keypoints.size());
  for (size_t i = 0; i < fs.keypoints.size(); ++i) {
    CHECK(again.keypoints[i].u == fs.keypoints[i].u);
    CHECK(again.keypoints[i].v == fs.keypoints[i].v);
    CHECK(again.descriptors[i] == fs.descriptors[i]);
  }
}

TEST_CASE("max_features caps the keypoint count by score") {
  const Image img = noise_image(160, 120, 5);
  const LocalFeatureSet full = detect_and_describe(img, 1500);
  const LocalFeatureSet capped = detect_and_describe(img, 20);
  REQUIRE(capped.keypoints.size() <= 20);
  if (full.keypoints.size() > 20) {
    CHECK(capped.keypoints.size() == 20);
    // The cap keeps the strongest responses.
    double min_kept = 1e18;
    for (const auto& kp : capped.keypoints) min_kept = std::min(min_kept, double(kp.score));
    size_t stronger = 0;
    for (const auto& kp : full.keypoints)
      if (double(kp.score) > min_kept) ++stronger;
    CHECK(stronger <= 20);
  }
}

TEST_CASE("matching: self-identity, symmetry, and random rejection") {
  const Image img = noise_image(128, 96, 11);
  const LocalFeatureSet fs = detect_and_describe(img);
  REQUIRE(fs.keypoints.size() >= 30);

  // Duplicate descriptors are ambiguous under the ratio test and drop their
  // own match, so identity holds for the vast majority, not necessarily all.
  const auto self = match_features(fs, fs);
  CHECK(self.size() >= size_t(0.9 * double(fs.keypoints.size())));
  for (const auto& [i, j] : self) CHECK(i == j);

  const Image other = noise_image(128, 96, 12);
  const LocalFeatureSet fo = detect_and_describe(other);
  const auto ab = match_features(fs, fo);
  const auto ba = match_features(fo, fs);
  CHECK(ab.size() == ba.size());
  for (const auto& [i, j] : ab)
    CHECK(std::find(ba.begin(), ba.end(), std::make_pair(j, i)) != ba.end());

  // Independent random descriptors: the ratio test rejects nearly everything.
  std::mt19937_64 rng(4);
  LocalFeatureSet ra, rb;
  for (int i = 0; i < 300; ++i) {
    ra.keypoints.push_back({float(i), 0, 1});
    ra.descriptors.push_back(random_desc(rng));
    rb.keypoints.push_back({float(i), 0, 1});
    rb.descriptors.push_back(random_desc(rng));
  }
  CHECK(match_features(ra, rb).size() <= 3);  // < 1% spurious
}

TEST_CASE("rendered views 0.1 m apart match consistently with geometry") {
  SceneSpec scene = default_scene(1);
  const GaussianMap map = generate_scene(scene);
  PinholeIntrinsics K{160, 160, 80, 60, 160, 120};
  Mat3 R;
  R.col(0) = Vec3(0, -1, 0);
  R.col(1) = Vec3(0, 0, -1);
  R.col(2) = Vec3(1, 0, 0);  // facing +x down the hall
  const CameraPose pa(Quat(R), Vec3(2.0, 4.0, 1.2));
  const CameraPose pb(Quat(R), Vec3(2.1, 4.0, 1.2));
  RenderConfig rcfg;
  const RenderedFrame fa = render(map, pa, K, rcfg);
  const RenderedFrame fb = render(map, pb, K, rcfg);

  const LocalFeatureSet sa = detect_and_describe(fa.color);
  const LocalFeatureSet sb = detect_and_describe(fb.color);
  const auto matches = match_features(sa, sb);
  REQUIRE(matches.size() >= 50);

  int checked = 0, correct = 0;
  for (const auto& [i, j] : matches) {
    const auto& ka = sa.keypoints[i];
    const double z = fa.depth.at(int(ka.u), int(ka.v));
    if (z <= 0) continue;
    ++checked;
    const Vec3 pw = pa.apply(back_project(ka.u + 0.5, ka.v + 0.5, z, K));
    try {
      const Projection pr = project_point(pw, pb, K);
      const auto& kb = sb.keypoints[j];
      if (std::hypot(pr.u - (kb.u + 0.5), pr.v - (kb.v + 0.5)) <= 3.0) ++correct;
    } catch (const BehindCamera&) {
    }
  }
  REQUIRE(checked >= 40);
  CHECK(double(correct) / checked >= 0.9);
}

TEST_CASE("view feature cache round trip") {
  const Image img = noise_image(96, 72, 21);
  ViewFeatures f;
  f.global = global_descriptor(img);
  f.local = detect_and_describe(img);
  const auto path =
      (std::filesystem::temp_directory_path() / "gsloc_feat_test.bin").string();
  save_view_features(path, f);
  const ViewFeatures back = load_view_features(path);
  CHECK(back.global.v == f.global.v);
  REQUIRE(back.local.keypoints.size() == f.local.keypoints.size());
  for (size_t i = 0; i < f.local.keypoints.size(); ++i) {
    CHECK(back.local.keypoints[i].u == f.local.keypoints[i].u);
    CHECK(back.local.keypoints[i].v == f.local.keypoints[i].v);
    CHECK(back.local.keypoints[i].score == f.local.keypoints[i].score);
    CHECK(back.local.descriptors[i] == f.local.descriptors[i]);
  }
  std::filesystem::remove(path);
}
