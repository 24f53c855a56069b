#include "gsloc/hgvl.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <numeric>
#include <thread>

namespace gsloc {

const char* to_string(LocStatus s) {
  switch (s) {
    case LocStatus::kSuccess: return "success";
    case LocStatus::kRetrievalFailed: return "retrieval_failed";
    case LocStatus::kInsufficientMatches: return "insufficient_matches";
    case LocStatus::kRansacFailed: return "ransac_failed";
  }
  return "unknown";
}

LocStatus loc_status_from_string(const std::string& s) {
  if (s == "success") return LocStatus::kSuccess;
  if (s == "retrieval_failed") return LocStatus::kRetrievalFailed;
  if (s == "insufficient_matches") return LocStatus::kInsufficientMatches;
  if (s == "ransac_failed") return LocStatus::kRansacFailed;
  throw std::invalid_argument("unknown localization status: " + s);
}

ReferenceDatabase build_reference_database(const std::vector<ReferenceView>& refs,
                                           const HgvlConfig& cfg) {
  ReferenceDatabase db;
  db.poses.resize(refs.size());
  db.features.resize(refs.size());
  if (!refs.empty()) db.intrinsics = refs.front().intrinsics;

  const int threads = std::max(1, cfg.threads);
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= refs.size()) return;
      db.poses[i] = refs[i].pose;
      db.features[i].global = global_descriptor(refs[i].image);
      db.features[i].local = detect_and_describe(refs[i].image, cfg.max_features);
    }
  };
  if (threads == 1 || refs.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return db;
}

namespace {

// Union-find over (view, keypoint) nodes of the retrieved reference views.
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

LocalizationResult localize_hgvl(const Image& query, const ReferenceDatabase& db,
                                 const PinholeIntrinsics& K,
                                 const HgvlConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  LocalizationResult res;
  auto finish = [&](LocStatus s) {
    res.status = s;
    res.elapsed_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return res;
  };

  if (db.features.empty()) return finish(LocStatus::kRetrievalFailed);

  const GlobalDescriptor qdesc = global_descriptor(query);
  std::vector<std::pair<GlobalDescriptor, int>> gdb;
  gdb.reserve(db.features.size());
  for (size_t i = 0; i < db.features.size(); ++i)
    gdb.emplace_back(db.features[i].global, int(i));
  const std::vector<int> retrieved = retrieve_topk(qdesc, gdb, cfg.top_k);
  if (retrieved.empty()) return finish(LocStatus::kRetrievalFailed);

  const LocalFeatureSet qfeat = detect_and_describe(query, cfg.max_features);
  if (qfeat.keypoints.empty()) return finish(LocStatus::kInsufficientMatches);

  // Node ids: rank r in the retrieved list, keypoint k -> offsets[r] + k.
  const int R = int(retrieved.size());
  std::vector<int> offsets(R + 1, 0);
  for (int r = 0; r < R; ++r)
    offsets[r + 1] = offsets[r] + int(db.features[retrieved[r]].local.keypoints.size());
  UnionFind uf(offsets[R]);

  for (int ri = 0; ri < R; ++ri)
    for (int rj = ri + 1; rj < R; ++rj) {
      const auto matches = match_features(db.features[retrieved[ri]].local,
                                          db.features[retrieved[rj]].local,
                                          cfg.match_ratio);
      for (const auto& [a, b] : matches)
        uf.unite(offsets[ri] + a, offsets[rj] + b);
    }

  // Group nodes into tracks; keep one observation per view (first keypoint).
  std::map<int, std::vector<TrackObservation>> groups;
  std::map<int, std::vector<int>> group_views;
  for (int r = 0; r < R; ++r) {
    const auto& kps = db.features[retrieved[r]].local.keypoints;
    for (int k = 0; k < int(kps.size()); ++k) {
      const int root = uf.find(offsets[r] + k);
      auto& views = group_views[root];
      if (std::find(views.begin(), views.end(), r) != views.end()) continue;
      views.push_back(r);
      // Keypoints are pixel indices; geometry uses pixel-center coordinates.
      groups[root].push_back({r, Vec2(kps[k].u + 0.5, kps[k].v + 0.5)});
    }
  }

  std::vector<std::vector<TrackObservation>> tracks;
  std::vector<int> track_roots;
  for (auto& [root, obs] : groups) {
    if (obs.size() < 2) continue;
    tracks.push_back(std::move(obs));
    track_roots.push_back(root);
  }

  std::vector<CameraPose> poses(R);
  for (int r = 0; r < R; ++r) poses[r] = db.poses[retrieved[r]];
  const auto points =
      triangulate_tracks(tracks, poses, db.intrinsics,
                         cfg.min_triangulation_angle_deg,
                         cfg.max_triangulation_reproj_px);
  res.num_3d_points = int(points.size());
  if (points.empty()) return finish(LocStatus::kInsufficientMatches);

  // Root id -> triangulated point. Track order matches the tracks vector, so
  // recover the root by matching observation lists back through indices.
  // triangulate_tracks keeps surviving tracks in input order with their
  // observation lists copied verbatim, so match them back by content.
  std::map<int, const TriangulatedPoint*> point_of_root;
  {
    auto same_track = [](const std::vector<TrackObservation>& a,
                         const std::vector<TrackObservation>& b) {
      if (a.size() != b.size()) return false;
      for (size_t i = 0; i < a.size(); ++i)
        if (a[i].view != b[i].view || a[i].pixel != b[i].pixel) return false;
      return true;
    };
    size_t ti = 0;
    for (const auto& pt : points) {
      while (ti < tracks.size() && !same_track(tracks[ti], pt.observations)) ++ti;
      if (ti < tracks.size()) point_of_root[track_roots[ti++]] = &pt;
    }
  }

  // Query -> reference matches, merged by track root: each query keypoint and
  // each track contribute at most one correspondence, best Hamming first.
  struct Cand {
    int dist;
    int qkp;
    int root;
    Vec2 pixel;
  };
  std::vector<Cand> cands;
  for (int r = 0; r < R; ++r) {
    const auto& ref = db.features[retrieved[r]].local;
    const auto matches = match_features(qfeat, ref, cfg.match_ratio);
    for (const auto& [qi, ki] : matches) {
      const int root = uf.find(offsets[r] + ki);
      if (!point_of_root.count(root)) continue;
      const int d = hamming(qfeat.descriptors[qi], ref.descriptors[ki]);
      cands.push_back({d, qi, root,
                       Vec2(qfeat.keypoints[qi].u + 0.5, qfeat.keypoints[qi].v + 0.5)});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.qkp != b.qkp) return a.qkp < b.qkp;
    return a.root < b.root;
  });
  std::vector<Correspondence2D3D> corrs;
  std::map<int, bool> used_root;
  std::vector<bool> used_q(qfeat.keypoints.size(), false);
  for (const auto& c : cands) {
    if (used_q[c.qkp] || used_root[c.root]) continue;
    used_q[c.qkp] = true;
    used_root[c.root] = true;
    corrs.push_back({point_of_root[c.root]->point, c.pixel});
  }

  if (int(corrs.size()) < kMinPnPInliers)
    return finish(LocStatus::kInsufficientMatches);

  try {
    const PnPResult pnp = pnp_ransac(corrs, K, cfg.ransac_threshold_px,
                                     cfg.ransac_iters, cfg.seed);
    res.pose = pnp.pose;
    res.inlier_count = int(pnp.inliers.size());
    return finish(LocStatus::kSuccess);
  } catch (const RansacFailed&) {
    return finish(LocStatus::kRansacFailed);
  }
}

}  // namespace gsloc
