#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <filesystem>
#include <fstream>
#include <random>

#include "gsloc/gaussian_map.hpp"

using namespace gsloc;
namespace fs = std::filesystem;

namespace {

// Random map whose parameters are exactly float32-representable, so the
// quantizing PLY round trip is bit-exact.
GaussianMap random_float_map(int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-3.0f, 3.0f);
  GaussianMap map;
  map.background_color = Vec3(0.25, 0.5, 0.75);
  map.metadata.seed = seed;
  map.metadata.source_dataset = "unit-test";
  map.metadata.config_tag = "t";
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive g;
    g.position = Vec3(u(rng), u(rng), u(rng));
    Eigen::Vector4f q(u(rng), u(rng), u(rng), u(rng));
    g.rotation = Quat(q(0), q(1), q(2), q(3));  // stored un-normalized
    g.log_scale = Vec3(u(rng), u(rng), u(rng));
    g.opacity_logit = u(rng);
    g.color = Vec3(std::abs(u(rng)) / 3, std::abs(u(rng)) / 3, std::abs(u(rng)) / 3);
    map.primitives.push_back(g);
  }
  return map;
}

}  // namespace

TEST_CASE("covariance_3d matches R S^2 R^T oracle and is SPD") {
  GaussianPrimitive g;
  g.rotation = Quat(0.7, 0.3, -0.4, 0.5).normalized();
  g.log_scale = Vec3(std::log(0.5), std::log(1.5), std::log(0.1));
  const Mat3 R = g.rotation.toRotationMatrix();
  Mat3 S2 = Mat3::Zero();
  for (int k = 0; k < 3; ++k) S2(k, k) = std::exp(2.0 * g.log_scale[k]);
  const Mat3 oracle = R * S2 * R.transpose();
  const Mat3 cov = covariance_3d(g);
  CHECK((cov - oracle).norm() <= 1e-12);
  CHECK((cov - cov.transpose()).norm() <= 1e-15);
  const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  CHECK(es.eigenvalues().minCoeff() > 0);
}

TEST_CASE("opacity is the logistic of the logit") {
  GaussianPrimitive g;
  g.opacity_logit = 0;
  CHECK(g.opacity() == doctest::Approx(0.5));
  g.opacity_logit = logit(0.9);
  CHECK(g.opacity() == doctest::Approx(0.9));
}

TEST_CASE("prune drops low opacity, keeps order") {
  GaussianMap map;
  for (int i = 0; i < 5; ++i) {
    GaussianPrimitive g;
    g.position = Vec3(i, 0, 0);
    g.opacity_logit = (i % 2 == 0) ? logit(0.9) : logit(0.001);
    map.primitives.push_back(g);
  }
  const GaussianMap kept = prune(map, 0.005);
  REQUIRE(kept.primitives.size() == 3);
  CHECK(kept.primitives[0].position.x() == 0);
  CHECK(kept.primitives[1].position.x() == 2);
  CHECK(kept.primitives[2].position.x() == 4);
}

TEST_CASE("PLY round trip is exact for float32-representable values") {
  const GaussianMap map = random_float_map(257, 99);
  const auto path = fs::temp_directory_path() / "gsloc_map_test.ply";
  save_map(map, path.string());
  const GaussianMap back = load_map(path.string());
  REQUIRE(back.primitives.size() == map.primitives.size());
  CHECK(back.metadata.seed == map.metadata.seed);
  CHECK(back.metadata.source_dataset == map.metadata.source_dataset);
  CHECK(back.metadata.config_tag == map.metadata.config_tag);
  CHECK((back.background_color - map.background_color).norm() <= 1e-7);
  for (size_t i = 0; i < map.primitives.size(); ++i) {
    const auto& a = map.primitives[i];
    const auto& b = back.primitives[i];
    CHECK(a.position == b.position);
    CHECK(a.log_scale == b.log_scale);
    CHECK(a.opacity_logit == b.opacity_logit);
    CHECK(a.color == b.color);
    CHECK(a.rotation.coeffs() == b.rotation.coeffs());
  }
  fs::remove(path);
}

TEST_CASE("load_map reports format errors with context") {
  const auto path = fs::temp_directory_path() / "gsloc_bad_map.ply";
  std::ofstream(path) << "not a ply at all\n";
  CHECK_THROWS_AS(load_map(path.string()), FormatError);

  // Truncated body: valid header claiming more vertices than present.
  const GaussianMap map = random_float_map(4, 1);
  save_map(map, path.string());
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 20);
  CHECK_THROWS_AS(load_map(path.string()), FormatError);
  fs::remove(path);
}

TEST_CASE("load_map rejects unknown format versions") {
  const GaussianMap map = random_float_map(2, 3);
  const auto path = fs::temp_directory_path() / "gsloc_ver_map.ply";
  save_map(map, path.string());
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  const std::string tag = "comment gsloc_map_version 1";
  const size_t pos = bytes.find(tag);
  REQUIRE(pos != std::string::npos);
  bytes[pos + tag.size() - 1] = '9';
  std::ofstream(path, std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_map(path.string()), VersionError);
  fs::remove(path);
}
