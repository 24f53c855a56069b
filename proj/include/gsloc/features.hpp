#ifndef GSLOC_FEATURES_HPP_
#define GSLOC_FEATURES_HPP_

#include <array>
#include <cstdint>

#include "gsloc/image.hpp"

#include <string>
#include <vector>

namespace gsloc {

// 16x16 normalized intensity thumbnail + 16-bin gradient-orientation
// histogram, L2-normalized (272 dims).
struct GlobalDescriptor {
  static constexpr int kThumb = 16;
  static constexpr int kHistBins = 16;
  static constexpr int kDim = kThumb * kThumb + kHistBins;
  std::array<double, kDim> v{};

  double dot(const GlobalDescriptor& o) const {
    double s = 0;
    for (int i = 0; i < kDim; ++i) s += v[i] * o.v[i];
    return s;
  }
};

GlobalDescriptor global_descriptor(const Image& image);

// ids of the k most similar entries by cosine similarity, descending;
// ties broken by ascending id.
std::vector<int> retrieve_topk(const GlobalDescriptor& query,
                               const std::vector<std::pair<GlobalDescriptor, int>>& db,
                               int k);

struct Keypoint {
  float u, v;
  float score;
};

using BinaryDescriptor = std::array<uint64_t, 4>;  // 256 bits

inline int hamming(const BinaryDescriptor& a, const BinaryDescriptor& b) {
  int d = 0;
  for (int i = 0; i < 4; ++i) d += __builtin_popcountll(a[i] ^ b[i]);
  return d;
}

struct LocalFeatureSet {
  std::vector<Keypoint> keypoints;
  std::vector<BinaryDescriptor> descriptors;
};

// Intensity ring corner test with non-max suppression, 256-bit descriptor
// from a fixed seeded pattern of smoothed pixel comparisons. Deterministic.
LocalFeatureSet detect_and_describe(const Image& image, int max_features = 1500);

// Mutual-nearest-neighbor Hamming matches passing the Lowe ratio test.
std::vector<std::pair<int, int>> match_features(const LocalFeatureSet& a,
                                                const LocalFeatureSet& b,
                                                double ratio = 0.8);

// Per-view cache: global descriptor + local features, versioned binary file.
struct ViewFeatures {
  GlobalDescriptor global;
  LocalFeatureSet local;
};
void save_view_features(const std::string& path, const ViewFeatures& f);
ViewFeatures load_view_features(const std::string& path);

}  // namespace gsloc

#endif
