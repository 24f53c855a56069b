#include "gsloc/scr.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include "gsloc/synth.hpp"

namespace gsloc {

Image to_working_resolution(const Image& image, double scale) {
  const int w = std::max(1, int(std::lround(image.width * scale)));
  const int h = std::max(1, int(std::lround(image.height * scale)));
  return downsample_area(image, w, h);
}

namespace {

// Validity-aware depth downsample: average of positive entries per block,
// zero when the whole footprint is invalid.
Image working_depth(const Image& depth, int out_w, int out_h) {
  Image out(out_w, out_h, 1);
  const double sx = double(depth.width) / out_w;
  const double sy = double(depth.height) / out_h;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const int x0 = int(x * sx), x1 = std::min(depth.width, int(std::ceil((x + 1) * sx)));
      const int y0 = int(y * sy), y1 = std::min(depth.height, int(std::ceil((y + 1) * sy)));
      double sum = 0;
      int n = 0;
      for (int yy = y0; yy < y1; ++yy)
        for (int xx = x0; xx < x1; ++xx) {
          const double d = depth.at(xx, yy);
          if (d > 0) {
            sum += d;
            ++n;
          }
        }
      out.at(x, y) = n > 0 ? sum / n : 0.0;
    }
  return out;
}

struct AugmentJitter {
  double angle_rad;
  double brightness;
  double contrast;
};

Image jitter_image(const Image& src, const AugmentJitter& j) {
  Image out(src.width, src.height, src.channels);
  const double cx = 0.5 * src.width, cy = 0.5 * src.height;
  const double ca = std::cos(-j.angle_rad), sa = std::sin(-j.angle_rad);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double sx = ca * dx - sa * dy + cx - 0.5;
      const double sy = sa * dx + ca * dy + cy - 0.5;
      for (int c = 0; c < src.channels; ++c) {
        const double v = src.bilinear(sx, sy, c);
        out.at(x, y, c) =
            std::clamp((v - 0.5) * j.contrast + 0.5 + j.brightness, 0.0, 1.0);
      }
    }
  return out;
}

}  // namespace

ScrTrainingSet build_training_set(const std::vector<ReferenceView>& views,
                                  const ScrConfig& cfg) {
  ScrTrainingSet set;
  for (size_t vi = 0; vi < views.size(); ++vi) {
    const ReferenceView& view = views[vi];
    const Image work = to_working_resolution(view.image);
    const Image wdepth = working_depth(view.depth, work.width, work.height);

    std::vector<int> valid;
    valid.reserve(wdepth.data.size());
    for (int y = 0; y < wdepth.height; ++y)
      for (int x = 0; x < wdepth.width; ++x)
        if (wdepth.at(x, y) > 0) valid.push_back(y * wdepth.width + x);
    if (valid.empty()) {
      ++set.skipped_no_depth;
      continue;
    }

    const PinholeIntrinsics Kw = view.intrinsics.scaled(kScrWorkingScale);
    std::mt19937_64 rng(mix_seed(cfg.seed, vi * 2 + 0x5c71));

    const int base_ctx = int(set.contexts.size());
    set.contexts.push_back(work);
    int aug_ctx = -1;
    AugmentJitter jitter{};
    if (cfg.augment) {
      jitter.angle_rad = (std::uniform_real_distribution<double>(-1, 1)(rng)) *
                         15.0 * M_PI / 180.0;
      jitter.brightness = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
      jitter.contrast = 1.0 + std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
      aug_ctx = int(set.contexts.size());
      set.contexts.push_back(jitter_image(work, jitter));
    }
    const double cx = 0.5 * work.width, cy = 0.5 * work.height;
    const double ca = std::cos(jitter.angle_rad), sa = std::sin(jitter.angle_rad);

    std::uniform_int_distribution<size_t> pick(0, valid.size() - 1);
    for (int s = 0; s < cfg.samples_per_view; ++s) {
      const int lin = valid[pick(rng)];
      const int px = lin % wdepth.width, py = lin / wdepth.width;
      const double u = px + 0.5, v = py + 0.5;
      const Vec3 target =
          view.pose.apply(back_project(u, v, wdepth.at(px, py), Kw));

      bool use_aug = cfg.augment && (rng() & 1);
      double su = u, sv = v;
      if (use_aug) {
        // Forward-map the source pixel into the rotated context.
        const double dx = u - cx, dy = v - cy;
        su = ca * dx - sa * dy + cx;
        sv = sa * dx + ca * dy + cy;
        if (su < 0.5 || sv < 0.5 || su > work.width - 0.5 ||
            sv > work.height - 0.5)
          use_aug = false;  // fall back to the unrotated context
      }
      ScrTrainingSample sample;
      sample.u = float(use_aug ? su : u);
      sample.v = float(use_aug ? sv : v);
      sample.context = use_aug ? aug_ctx : base_ctx;
      sample.target = target;
      sample.source_view = int(vi);
      sample.provenance = view.provenance;
      set.samples.push_back(sample);
    }
  }
  return set;
}

namespace {

double split_feature_value(const Image& ctx, float u, float v,
                           const SplitFeature& f) {
  const int x = int(u), y = int(v);
  return ctx.at_clamped(x + f.o1x, y + f.o1y, f.ch1) -
         ctx.at_clamped(x + f.o2x, y + f.o2y, f.ch2);
}

double sample_feature(const ScrTrainingSet& set, int idx, const SplitFeature& f) {
  const ScrTrainingSample& s = set.samples[idx];
  return split_feature_value(set.contexts[s.context], s.u, s.v, f);
}

// Sum of squared deviations from the mean, from first and second moments.
double ssd(const Vec3& sum, double sumsq, int n) {
  if (n == 0) return 0;
  return std::max(0.0, sumsq - sum.squaredNorm() / n);
}

std::vector<LeafMode> leaf_modes(const ScrTrainingSet& set,
                                 const std::vector<int>& indices, int max_modes) {
  std::vector<Vec3> pts;
  pts.reserve(indices.size());
  for (int i : indices) pts.push_back(set.samples[i].target);

  const int k = std::min<int>(max_modes, int(pts.size()));
  // Deterministic quantile initialization over a lexicographic order.
  std::vector<int> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (pts[a].x() != pts[b].x()) return pts[a].x() < pts[b].x();
    if (pts[a].y() != pts[b].y()) return pts[a].y() < pts[b].y();
    return pts[a].z() < pts[b].z();
  });
  std::vector<Vec3> centers(k);
  for (int c = 0; c < k; ++c)
    centers[c] = pts[order[(2 * c + 1) * (pts.size() - 1) / std::max(1, 2 * k - 1)]];

  std::vector<int> assign(pts.size(), 0);
  for (int it = 0; it < 10; ++it) {
    bool changed = false;
    for (size_t i = 0; i < pts.size(); ++i) {
      int best = 0;
      double best_d = (pts[i] - centers[0]).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (pts[i] - centers[c]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    std::vector<Vec3> sums(k, Vec3::Zero());
    std::vector<int> counts(k, 0);
    for (size_t i = 0; i < pts.size(); ++i) {
      sums[assign[i]] += pts[i];
      counts[assign[i]]++;
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) centers[c] = sums[c] / counts[c];
    if (!changed) break;
  }

  std::vector<LeafMode> modes;
  for (int c = 0; c < k; ++c) {
    LeafMode m;
    for (size_t i = 0; i < pts.size(); ++i) {
      if (assign[i] != c) continue;
      m.mean += pts[i];
      m.count++;
    }
    if (m.count == 0) continue;
    m.mean /= m.count;
    for (size_t i = 0; i < pts.size(); ++i)
      if (assign[i] == c) m.cov_trace += (pts[i] - m.mean).squaredNorm();
    m.cov_trace /= m.count;
    modes.push_back(m);
  }
  std::sort(modes.begin(), modes.end(), [](const LeafMode& a, const LeafMode& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.cov_trace < b.cov_trace;
  });
  return modes;
}

struct TreeBuilder {
  const ScrTrainingSet& set;
  const ScrConfig& cfg;
  std::mt19937_64 rng;
  std::vector<ForestNode> nodes;

  int build(std::vector<int>& indices, int depth) {
    const int node_id = int(nodes.size());
    nodes.emplace_back();
    const int n = int(indices.size());

    Vec3 sum = Vec3::Zero();
    double sumsq = 0;
    for (int i : indices) {
      sum += set.samples[i].target;
      sumsq += set.samples[i].target.squaredNorm();
    }
    const bool can_split = depth < cfg.max_depth &&
                           n >= 2 * cfg.min_leaf_samples &&
                           ssd(sum, sumsq, n) > 1e-12;
    if (can_split) {
      // Score candidates on a deterministic strided subset.
      std::vector<int> subset;
      if (n > cfg.split_score_subsample) {
        subset.reserve(cfg.split_score_subsample);
        for (int i = 0; i < cfg.split_score_subsample; ++i)
          subset.push_back(indices[size_t(i) * n / cfg.split_score_subsample]);
      } else {
        subset = indices;
      }

      std::vector<std::pair<double, SplitFeature>> scored;
      scored.reserve(cfg.candidate_splits);
      const int channels = set.contexts.front().channels;
      std::uniform_int_distribution<int> pick_ch(0, channels - 1);
      std::uniform_int_distribution<int> pick_off(-kScrOffsetRange, kScrOffsetRange);
      std::uniform_int_distribution<size_t> pick_sub(0, subset.size() - 1);
      for (int c = 0; c < cfg.candidate_splits; ++c) {
        SplitFeature f;
        f.ch1 = int16_t(pick_ch(rng));
        f.ch2 = int16_t(pick_ch(rng));
        f.o1x = int16_t(pick_off(rng));
        f.o1y = int16_t(pick_off(rng));
        f.o2x = int16_t(pick_off(rng));
        f.o2y = int16_t(pick_off(rng));
        f.threshold = float(sample_feature(set, subset[pick_sub(rng)], f));

        Vec3 lsum = Vec3::Zero(), rsum = Vec3::Zero();
        double lsq = 0, rsq = 0;
        int ln = 0, rn = 0;
        for (int i : subset) {
          const Vec3& t = set.samples[i].target;
          if (sample_feature(set, i, f) <= f.threshold) {
            lsum += t;
            lsq += t.squaredNorm();
            ++ln;
          } else {
            rsum += t;
            rsq += t.squaredNorm();
            ++rn;
          }
        }
        if (ln == 0 || rn == 0) continue;
        scored.emplace_back(ssd(lsum, lsq, ln) + ssd(rsum, rsq, rn), f);
      }
      std::stable_sort(scored.begin(), scored.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });

      for (const auto& [score, f] : scored) {
        std::vector<int> left, right;
        for (int i : indices) {
          (sample_feature(set, i, f) <= f.threshold ? left : right).push_back(i);
        }
        if (int(left.size()) < cfg.min_leaf_samples ||
            int(right.size()) < cfg.min_leaf_samples)
          continue;
        indices.clear();
        indices.shrink_to_fit();
        nodes[node_id].split = f;
        const int l = build(left, depth + 1);
        nodes[node_id].left = l;
        const int r = build(right, depth + 1);
        nodes[node_id].right = r;
        return node_id;
      }
    }
    nodes[node_id].modes = leaf_modes(set, indices, 3);
    return node_id;
  }
};

}  // namespace

RegressionForest train_forest(const ScrTrainingSet& set, const ScrConfig& cfg) {
  constexpr size_t kMinSamples = 1000;
  if (set.samples.size() < kMinSamples)
    throw InsufficientSamples(set.samples.size(), kMinSamples);

  RegressionForest forest;
  forest.seed = cfg.seed;
  forest.working_scale = kScrWorkingScale;

  Vec3 lo = set.samples.front().target, hi = lo;
  for (const auto& s : set.samples) {
    lo = lo.cwiseMin(s.target);
    hi = hi.cwiseMax(s.target);
  }
  const Vec3 margin = 0.05 * (hi - lo);  // 10% total expansion
  forest.bbox_min = lo - margin;
  forest.bbox_max = hi + margin;

  const size_t n = set.samples.size();
  const size_t bag_size = std::max<size_t>(1, size_t(std::lround(0.63 * double(n))));
  forest.trees.resize(cfg.num_trees);

  auto train_tree = [&](int t) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x7e55 + uint64_t(t)));
    std::vector<int> indices(n);
    std::iota(indices.begin(), indices.end(), 0);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(bag_size);
    std::sort(indices.begin(), indices.end());

    TreeBuilder builder{set, cfg, std::mt19937_64(mix_seed(cfg.seed, 0x13ee + uint64_t(t))), {}};
    builder.build(indices, 0);
    forest.trees[t] = std::move(builder.nodes);
  };

  const int threads = std::min(std::max(1, cfg.threads), cfg.num_trees);
  if (threads == 1) {
    for (int t = 0; t < cfg.num_trees; ++t) train_tree(t);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&]() {
        for (;;) {
          const int t = next.fetch_add(1);
          if (t >= cfg.num_trees) return;
          train_tree(t);
        }
      });
    for (auto& th : pool) th.join();
  }
  return forest;
}

namespace {

const std::vector<LeafMode>& route(const std::vector<ForestNode>& tree,
                                   const Image& img, int x, int y) {
  int node = 0;
  for (;;) {
    const ForestNode& nd = tree[node];
    if (nd.left < 0) return nd.modes;
    const double f = split_feature_value(img, float(x + 0.5), float(y + 0.5), nd.split);
    node = f <= nd.split.threshold ? nd.left : nd.right;
  }
}

}  // namespace

std::vector<SceneCoordPrediction> predict_scene_coords(
    const RegressionForest& forest, const Image& working_image, int stride) {
  std::vector<SceneCoordPrediction> preds;
  if (working_image.empty() || forest.trees.empty()) return preds;
  stride = std::max(1, stride);

  for (int y = stride / 2; y < working_image.height; y += stride)
    for (int x = stride / 2; x < working_image.width; x += stride) {
      // Collect candidate modes from all trees, then merge nearby ones so a
      // location supported by several trees outweighs any single leaf.
      std::vector<const LeafMode*> cand;
      for (const auto& tree : forest.trees)
        for (const LeafMode& m : route(tree, working_image, x, y))
          cand.push_back(&m);
      if (cand.empty()) continue;

      constexpr double kMergeRadius = 0.2;  // meters
      std::vector<bool> used(cand.size(), false);
      Vec3 best_mean = Vec3::Zero();
      double best_trace = 0;
      long best_weight = -1;
      for (size_t i = 0; i < cand.size(); ++i) {
        if (used[i]) continue;
        Vec3 sum = Vec3::Zero();
        double trace = 0;
        long weight = 0;
        for (size_t j = i; j < cand.size(); ++j) {
          if (used[j]) continue;
          if ((cand[j]->mean - cand[i]->mean).norm() > kMergeRadius) continue;
          used[j] = true;
          sum += cand[j]->mean * cand[j]->count;
          trace += cand[j]->cov_trace * cand[j]->count;
          weight += cand[j]->count;
        }
        const double tr = trace / double(weight);
        if (weight > best_weight ||
            (weight == best_weight && tr < best_trace)) {
          best_weight = weight;
          best_mean = sum / double(weight);
          best_trace = tr;
        }
      }

      SceneCoordPrediction p;
      p.pixel = Vec2(x + 0.5, y + 0.5);
      p.coord = best_mean.cwiseMax(forest.bbox_min).cwiseMin(forest.bbox_max);
      p.confidence = 1.0 / (1e-6 + best_trace);
      preds.push_back(p);
    }
  return preds;
}

LocalizationResult localize_scr(const RegressionForest& forest,
                                const Image& query, const PinholeIntrinsics& K,
                                const ScrConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  LocalizationResult res;
  auto finish = [&](LocStatus s) {
    res.status = s;
    res.elapsed_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return res;
  };

  const Image work = to_working_resolution(query, forest.working_scale);
  auto preds = predict_scene_coords(forest, work, cfg.predict_stride);
  res.num_3d_points = int(preds.size());
  if (int(preds.size()) < kMinPnPInliers)
    return finish(LocStatus::kInsufficientMatches);

  // Keep the most confident predictions; RANSAC absorbs the rest.
  std::stable_sort(preds.begin(), preds.end(),
                   [](const SceneCoordPrediction& a, const SceneCoordPrediction& b) {
                     return a.confidence > b.confidence;
                   });
  const size_t keep = std::max<size_t>(kMinPnPInliers, preds.size() * 3 / 4);
  preds.resize(std::min(preds.size(), keep));

  std::vector<Correspondence2D3D> corrs;
  corrs.reserve(preds.size());
  for (const auto& p : preds) corrs.push_back({p.coord, p.pixel});

  const PinholeIntrinsics Kw = K.scaled(forest.working_scale);
  try {
    const PnPResult pnp = pnp_ransac(corrs, Kw, cfg.ransac_threshold_px,
                                     cfg.ransac_iters, cfg.seed);
    res.pose = pnp.pose;
    res.inlier_count = int(pnp.inliers.size());
    return finish(LocStatus::kSuccess);
  } catch (const RansacFailed&) {
    return finish(LocStatus::kRansacFailed);
  }
}

namespace {
constexpr uint32_t kForestMagic = 0x67737266;  // 'gsrf'
constexpr uint32_t kForestVersion = 1;
}  // namespace

void save_forest(const std::string& path, const RegressionForest& forest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write forest: " + path);
  auto put = [&](const void* p, size_t bytes) {
    out.write(reinterpret_cast<const char*>(p), std::streamsize(bytes));
  };
  put(&kForestMagic, 4);
  put(&kForestVersion, 4);
  put(&forest.working_scale, 8);
  put(forest.bbox_min.data(), 24);
  put(forest.bbox_max.data(), 24);
  put(&forest.seed, 8);
  const uint32_t nt = uint32_t(forest.trees.size());
  put(&nt, 4);
  for (const auto& tree : forest.trees) {
    const uint32_t nn = uint32_t(tree.size());
    put(&nn, 4);
    for (const ForestNode& nd : tree) {
      put(&nd.split.ch1, 2);
      put(&nd.split.ch2, 2);
      put(&nd.split.o1x, 2);
      put(&nd.split.o1y, 2);
      put(&nd.split.o2x, 2);
      put(&nd.split.o2y, 2);
      put(&nd.split.threshold, 4);
      put(&nd.left, 4);
      put(&nd.right, 4);
      const uint32_t nm = uint32_t(nd.modes.size());
      put(&nm, 4);
      for (const LeafMode& m : nd.modes) {
        put(m.mean.data(), 24);
        put(&m.cov_trace, 8);
        const int32_t c = m.count;
        put(&c, 4);
      }
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

RegressionForest load_forest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open forest: " + path);
  auto get = [&](void* p, size_t bytes) {
    in.read(reinterpret_cast<char*>(p), std::streamsize(bytes));
    if (!in) throw std::runtime_error("truncated forest file: " + path);
  };
  uint32_t magic = 0, version = 0;
  get(&magic, 4);
  get(&version, 4);
  if (magic != kForestMagic) throw std::runtime_error("bad forest magic in " + path);
  if (version != kForestVersion)
    throw std::runtime_error("unsupported forest version in " + path);

  RegressionForest forest;
  get(&forest.working_scale, 8);
  get(forest.bbox_min.data(), 24);
  get(forest.bbox_max.data(), 24);
  get(&forest.seed, 8);
  uint32_t nt = 0;
  get(&nt, 4);
  forest.trees.resize(nt);
  for (auto& tree : forest.trees) {
    uint32_t nn = 0;
    get(&nn, 4);
    tree.resize(nn);
    for (ForestNode& nd : tree) {
      get(&nd.split.ch1, 2);
      get(&nd.split.ch2, 2);
      get(&nd.split.o1x, 2);
      get(&nd.split.o1y, 2);
      get(&nd.split.o2x, 2);
      get(&nd.split.o2y, 2);
      get(&nd.split.threshold, 4);
      get(&nd.left, 4);
      get(&nd.right, 4);
      uint32_t nm = 0;
      get(&nm, 4);
      nd.modes.resize(nm);
      for (LeafMode& m : nd.modes) {
        get(m.mean.data(), 24);
        get(&m.cov_trace, 8);
        int32_t c = 0;
        get(&c, 4);
        m.count = c;
      }
    }
  }
  return forest;
}

}  // namespace gsloc
