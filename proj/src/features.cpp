#include "gsloc/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "gsloc/image_io.hpp"

namespace gsloc {

GlobalDescriptor global_descriptor(const Image& image) {
  if (image.empty()) throw std::invalid_argument("global_descriptor: empty image");
  const Image gray = to_grayscale(image);

  double mean = 0;
  for (const double v : gray.data) mean += v;
  mean /= double(gray.data.size());
  double var = 0;
  for (const double v : gray.data) var += (v - mean) * (v - mean);
  const double stddev = std::sqrt(var / double(gray.data.size()));
  const double inv_std = 1.0 / std::max(stddev, 1e-9);

  GlobalDescriptor d;
  const Image thumb = downsample_area(gray, GlobalDescriptor::kThumb,
                                      GlobalDescriptor::kThumb);
  for (int y = 0; y < GlobalDescriptor::kThumb; ++y)
    for (int x = 0; x < GlobalDescriptor::kThumb; ++x)
      d.v[y * GlobalDescriptor::kThumb + x] = (thumb.at(x, y) - mean) * inv_std;

  // Gradient-orientation histogram, magnitude-weighted.
  double hist[GlobalDescriptor::kHistBins] = {};
  double total = 0;
  for (int y = 1; y + 1 < gray.height; ++y)
    for (int x = 1; x + 1 < gray.width; ++x) {
      const double gx = gray.at(x + 1, y) - gray.at(x - 1, y);
      const double gy = gray.at(x, y + 1) - gray.at(x, y - 1);
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag < 1e-12) continue;
      const double ang = std::atan2(gy, gx);  // [-pi, pi]
      int bin = int((ang + M_PI) / (2 * M_PI) * GlobalDescriptor::kHistBins);
      bin = std::clamp(bin, 0, GlobalDescriptor::kHistBins - 1);
      hist[bin] += mag;
      total += mag;
    }
  const int off = GlobalDescriptor::kThumb * GlobalDescriptor::kThumb;
  if (total > 0) {
    for (int b = 0; b < GlobalDescriptor::kHistBins; ++b)
      d.v[off + b] = hist[b] / total;
  } else {
    d.v[off] = 1.0;  // textureless guard, keeps the descriptor unit-norm
  }

  double norm = 0;
  for (const double v : d.v) norm += v * v;
  norm = std::sqrt(norm);
  if (norm < 1e-12) {
    d.v[off] = 1.0;
    norm = 1.0;
  }
  for (double& v : d.v) v /= norm;
  return d;
}

std::vector<int> retrieve_topk(
    const GlobalDescriptor& query,
    const std::vector<std::pair<GlobalDescriptor, int>>& db, int k) {
  std::vector<std::pair<double, int>> scored;
  scored.reserve(db.size());
  for (const auto& [desc, id] : db) scored.emplace_back(desc.dot(query), id);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const int n = std::min<int>(k, int(scored.size()));
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = scored[i].second;
  return ids;
}

namespace {

// 16-pixel Bresenham circle of radius 3.
constexpr int kRing[16][2] = {{0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0}, {3, 1},
                              {2, 2},  {1, 3},  {0, 3},  {-1, 3}, {-2, 2},
                              {-3, 1}, {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};
constexpr double kCornerThreshold = 0.04;
constexpr int kContiguous = 9;
constexpr int kPatchRadius = 15;

Image box_blur(const Image& img, int radius) {
  Image tmp(img.width, img.height, 1), out(img.width, img.height, 1);
  const double inv = 1.0 / (2 * radius + 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0;
      for (int d = -radius; d <= radius; ++d) s += img.at_clamped(x + d, y);
      tmp.at(x, y) = s * inv;
    }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0;
      for (int d = -radius; d <= radius; ++d) s += tmp.at_clamped(x, y + d);
      out.at(x, y) = s * inv;
    }
  return out;
}

uint64_t splitmix64_f(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct ComparisonPattern {
  int ax[256], ay[256], bx[256], by[256];
};

// Fixed seeded comparison pattern within the descriptor patch.
const ComparisonPattern& pattern() {
  static const ComparisonPattern p = [] {
    ComparisonPattern pat;
    uint64_t s = 0xb81ef00dULL;
    auto next = [&]() {
      s = splitmix64_f(s);
      return int(s % (2 * kPatchRadius + 1)) - kPatchRadius;
    };
    for (int i = 0; i < 256; ++i) {
      pat.ax[i] = next();
      pat.ay[i] = next();
      pat.bx[i] = next();
      pat.by[i] = next();
    }
    return pat;
  }();
  return p;
}

}  // namespace

LocalFeatureSet detect_and_describe(const Image& image, int max_features) {
  LocalFeatureSet out;
  if (image.width < 32 || image.height < 32)
    throw std::invalid_argument("detect_and_describe: image smaller than 32x32");
  const Image gray = to_grayscale(image);

  // Corner score: FAST-style ring test.
  Image score(gray.width, gray.height, 1);
  const int border = 3;
  for (int y = border; y < gray.height - border; ++y)
    for (int x = border; x < gray.width - border; ++x) {
      const double c = gray.at(x, y);
      int state[16];
      double diff[16];
      for (int i = 0; i < 16; ++i) {
        const double v = gray.at(x + kRing[i][0], y + kRing[i][1]);
        diff[i] = v - c;
        state[i] = diff[i] > kCornerThreshold ? 1 : (diff[i] < -kCornerThreshold ? -1 : 0);
      }
      // Longest circular run of a consistent state.
      int best_run = 0;
      for (int sgn : {1, -1}) {
        int run = 0;
        for (int i = 0; i < 32; ++i) {
          if (state[i % 16] == sgn) {
            if (++run > best_run) best_run = run;
            if (run >= 16) break;
          } else {
            run = 0;
          }
        }
      }
      // Saddle (checkerboard-style) corners split the differing ring pixels
      // into several arcs and never form one long run; accept those too.
      int arcs = 0, n_diff = 0;
      for (int i = 0; i < 16; ++i) {
        if (state[i] == 0) continue;
        ++n_diff;
        if (state[i] != state[(i + 15) % 16]) ++arcs;
      }
      if (best_run >= kContiguous || (arcs >= 2 && n_diff >= 8)) {
        double s = 0;
        for (int i = 0; i < 16; ++i) s += std::abs(diff[i]);
        score.at(x, y) = s;
      }
    }

  // 3x3 non-max suppression. Descriptor patches clamp at the image border,
  // so detection only needs the ring to stay inside.
  const int margin = border + 1;
  std::vector<Keypoint> kps;
  for (int y = margin; y < gray.height - margin; ++y)
    for (int x = margin; x < gray.width - margin; ++x) {
      const double s = score.at(x, y);
      if (s <= 0) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const double sn = score.at(x + dx, y + dy);
          if (sn > s || (sn == s && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;
      // Score plateaus (flat on ideal corners) localize poorly under plain
      // NMS; recenter on the local score-weighted centroid.
      double wsum = 0, cx = 0, cy = 0;
      for (int dy = -3; dy <= 3; ++dy)
        for (int dx = -3; dx <= 3; ++dx) {
          const double w = score.at_clamped(x + dx, y + dy);
          wsum += w;
          cx += w * (x + dx);
          cy += w * (y + dy);
        }
      double u = cx / wsum, v = cy / wsum;
      // Sub-pixel refinement: at the true corner q, every window pixel's
      // gradient is orthogonal to its offset from q, so q solves the
      // weighted normal equations sum(w g g^T) q = sum(w g g^T p).
      for (int it = 0; it < 5; ++it) {
        const int px0 = int(std::lround(u)), py0 = int(std::lround(v));
        double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
        for (int dy = -4; dy <= 4; ++dy)
          for (int dx = -4; dx <= 4; ++dx) {
            const int px = px0 + dx, py = py0 + dy;
            const double gx =
                0.5 * (gray.at_clamped(px + 1, py) - gray.at_clamped(px - 1, py));
            const double gy =
                0.5 * (gray.at_clamped(px, py + 1) - gray.at_clamped(px, py - 1));
            const double w = std::exp(-(dx * dx + dy * dy) / 8.0);
            a11 += w * gx * gx;
            a12 += w * gx * gy;
            a22 += w * gy * gy;
            b1 += w * (gx * gx * px + gx * gy * py);
            b2 += w * (gx * gy * px + gy * gy * py);
          }
        const double det = a11 * a22 - a12 * a12;
        if (std::abs(det) < 1e-12) break;
        const double nu = (a22 * b1 - a12 * b2) / det;
        const double nv = (a11 * b2 - a12 * b1) / det;
        if (!std::isfinite(nu) || !std::isfinite(nv)) break;
        const double step2 = (nu - u) * (nu - u) + (nv - v) * (nv - v);
        u = nu;
        v = nv;
        if (step2 < 1e-8) break;
      }
      // Reject unstable refinements that ran away from the detection.
      if (std::hypot(u - x, v - y) > 3.0) {
        u = cx / wsum;
        v = cy / wsum;
      }
      kps.push_back({float(u), float(v), float(s)});
    }

  std::stable_sort(kps.begin(), kps.end(),
                   [](const Keypoint& a, const Keypoint& b) { return a.score > b.score; });
  if (int(kps.size()) > max_features) kps.resize(max_features);

  const Image smooth = box_blur(gray, 2);
  const auto& pat = pattern();
  out.keypoints = std::move(kps);
  out.descriptors.resize(out.keypoints.size());
  for (size_t i = 0; i < out.keypoints.size(); ++i) {
    const int x = int(out.keypoints[i].u), y = int(out.keypoints[i].v);
    BinaryDescriptor d{};
    for (int b = 0; b < 256; ++b) {
      const double va = smooth.at_clamped(x + pat.ax[b], y + pat.ay[b]);
      const double vb = smooth.at_clamped(x + pat.bx[b], y + pat.by[b]);
      if (va > vb) d[b >> 6] |= (uint64_t(1) << (b & 63));
    }
    out.descriptors[i] = d;
  }
  return out;
}

std::vector<std::pair<int, int>> match_features(const LocalFeatureSet& a,
                                                const LocalFeatureSet& b,
                                                double ratio) {
  const size_t na = a.descriptors.size(), nb = b.descriptors.size();
  std::vector<std::pair<int, int>> matches;
  if (na == 0 || nb == 0) return matches;

  // Nearest and second-nearest neighbor in both directions so the ratio test
  // is symmetric: match(a,b) is the transpose of match(b,a).
  struct NN {
    int best = -1;
    int d1 = INT32_MAX, d2 = INT32_MAX;
  };
  std::vector<NN> fwd(na), bwd(nb);
  for (size_t i = 0; i < na; ++i)
    for (size_t j = 0; j < nb; ++j) {
      const int d = hamming(a.descriptors[i], b.descriptors[j]);
      NN& f = fwd[i];
      if (d < f.d1) {
        f.d2 = f.d1;
        f.d1 = d;
        f.best = int(j);
      } else if (d < f.d2) {
        f.d2 = d;
      }
      NN& g = bwd[j];
      if (d < g.d1) {
        g.d2 = g.d1;
        g.d1 = d;
        g.best = int(i);
      } else if (d < g.d2) {
        g.d2 = d;
      }
    }
  for (size_t i = 0; i < na; ++i) {
    const NN& f = fwd[i];
    if (f.best < 0 || bwd[f.best].best != int(i)) continue;
    if (double(f.d1) >= ratio * double(f.d2)) continue;
    const NN& g = bwd[f.best];
    if (double(g.d1) >= ratio * double(g.d2)) continue;
    matches.emplace_back(int(i), f.best);
  }
  return matches;
}

namespace {
constexpr uint32_t kFeatureCacheMagic = 0x67736c66;  // 'gslf'
constexpr uint32_t kFeatureCacheVersion = 1;
}  // namespace

void save_view_features(const std::string& path, const ViewFeatures& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write feature cache: " + path);
  auto put = [&](const void* p, size_t n) {
    out.write(reinterpret_cast<const char*>(p), std::streamsize(n));
  };
  put(&kFeatureCacheMagic, 4);
  put(&kFeatureCacheVersion, 4);
  put(f.global.v.data(), sizeof(double) * GlobalDescriptor::kDim);
  const uint32_t n = uint32_t(f.local.keypoints.size());
  put(&n, 4);
  put(f.local.keypoints.data(), sizeof(Keypoint) * n);
  put(f.local.descriptors.data(), sizeof(BinaryDescriptor) * n);
  if (!out) throw std::runtime_error("write failed: " + path);
}

ViewFeatures load_view_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature cache: " + path);
  auto get = [&](void* p, size_t n) {
    in.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (!in) throw std::runtime_error("truncated feature cache: " + path);
  };
  uint32_t magic = 0, version = 0;
  get(&magic, 4);
  get(&version, 4);
  if (magic != kFeatureCacheMagic)
    throw std::runtime_error("bad feature cache magic in " + path);
  if (version != kFeatureCacheVersion)
    throw std::runtime_error("unsupported feature cache version in " + path);
  ViewFeatures f;
  get(f.global.v.data(), sizeof(double) * GlobalDescriptor::kDim);
  uint32_t n = 0;
  get(&n, 4);
  f.local.keypoints.resize(n);
  f.local.descriptors.resize(n);
  get(f.local.keypoints.data(), sizeof(Keypoint) * n);
  get(f.local.descriptors.data(), sizeof(BinaryDescriptor) * n);
  return f;
}

}  // namespace gsloc
