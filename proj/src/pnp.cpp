#include "gsloc/pnp.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <random>

namespace gsloc {

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Camera-from-world rigid transform used internally by the solvers.
struct RigidCW {
  Mat3 R;
  Vec3 t;

  Vec3 apply(const Vec3& X) const { return R * X + t; }
  CameraPose to_pose() const {
    const Mat3 Rwc = R.transpose();
    return CameraPose(Quat(Rwc), -(Rwc * t));
  }
};

double reproj_error_px(const RigidCW& T, const Vec3& X, const Vec2& uv,
                       const PinholeIntrinsics& K) {
  const Vec3 pc = T.apply(X);
  if (pc.z() <= kZNear) return std::numeric_limits<double>::infinity();
  const Vec2 proj(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
  return (proj - uv).norm();
}

// 6-point DLT in normalized camera coordinates, rotation snapped to the
// nearest orthonormal matrix, sign fixed by cheirality.
bool dlt_pose(const std::vector<Correspondence2D3D>& corrs,
              const std::vector<int>& sample, const PinholeIntrinsics& K,
              RigidCW& out) {
  Eigen::MatrixXd A(2 * sample.size(), 12);
  for (size_t i = 0; i < sample.size(); ++i) {
    const auto& c = corrs[sample[i]];
    const double xn = (c.pixel.x() - K.cx) / K.fx;
    const double yn = (c.pixel.y() - K.cy) / K.fy;
    const Eigen::Vector4d Xh(c.point.x(), c.point.y(), c.point.z(), 1.0);
    A.row(2 * i).setZero();
    A.row(2 * i + 1).setZero();
    A.block<1, 4>(2 * i, 0) = Xh.transpose();
    A.block<1, 4>(2 * i, 8) = -xn * Xh.transpose();
    A.block<1, 4>(2 * i + 1, 4) = Xh.transpose();
    A.block<1, 4>(2 * i + 1, 8) = -yn * Xh.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
  Eigen::VectorXd p = svd.matrixV().col(11);

  // The solution is defined up to sign; fix it before snapping so that the
  // sample points get positive projective depth (third row of P).
  int front = 0, back = 0;
  for (size_t i = 0; i < sample.size(); ++i) {
    const auto& c = corrs[sample[i]];
    const double w = p(8) * c.point.x() + p(9) * c.point.y() +
                     p(10) * c.point.z() + p(11);
    (w > 0 ? front : back)++;
  }
  if (back > front) p = -p;

  Mat3 M;
  M << p(0), p(1), p(2), p(4), p(5), p(6), p(8), p(9), p(10);
  const Vec3 m(p(3), p(7), p(11));
  if (M.determinant() <= 0) return false;  // reflected or degenerate

  Eigen::JacobiSVD<Mat3> msvd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double scale = msvd.singularValues().mean();
  if (scale < 1e-12) return false;
  out.R = msvd.matrixU() * msvd.matrixV().transpose();
  out.t = m / scale;
  return true;
}

// Levenberg-Marquardt on the 6-dof pose, analytic Jacobian.
void refine_pose(const std::vector<Correspondence2D3D>& corrs,
                 const std::vector<int>& inliers, const PinholeIntrinsics& K,
                 RigidCW& T) {
  double lambda = 1e-4;
  auto cost = [&](const RigidCW& P) {
    double c = 0;
    for (int i : inliers) {
      const double e = reproj_error_px(P, corrs[i].point, corrs[i].pixel, K);
      c += std::isfinite(e) ? e * e : 1e12;
    }
    return c;
  };
  double current = cost(T);
  for (int it = 0; it < 100; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (int i : inliers) {
      const Vec3 pc = T.apply(corrs[i].point);
      if (pc.z() <= kZNear) continue;
      const double iz = 1.0 / pc.z();
      Eigen::Matrix<double, 2, 3> Jp;
      Jp << K.fx * iz, 0, -K.fx * pc.x() * iz * iz,
            0, K.fy * iz, -K.fy * pc.y() * iz * iz;
      Eigen::Matrix<double, 2, 6> J;
      J.leftCols<3>() = Jp * (-skew(pc));  // left perturbation of R
      J.rightCols<3>() = Jp;
      const Vec2 r(K.fx * pc.x() * iz + K.cx - corrs[i].pixel.x(),
                   K.fy * pc.y() * iz + K.cy - corrs[i].pixel.y());
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    Eigen::Matrix<double, 6, 6> Hl = H;
    Hl.diagonal().array() += lambda * (H.diagonal().array() + 1e-12);
    const Eigen::Matrix<double, 6, 1> delta = Hl.ldlt().solve(-g);
    if (!delta.allFinite()) break;

    RigidCW trial = T;
    const Vec3 w = delta.head<3>();
    const double angle = w.norm();
    const Mat3 dR = angle > 1e-16
                        ? Eigen::AngleAxisd(angle, w / angle).toRotationMatrix()
                        : Mat3::Identity();
    trial.R = dR * T.R;
    trial.t = dR * T.t + delta.tail<3>();
    const double trial_cost = cost(trial);
    if (trial_cost < current) {
      T = trial;
      current = trial_cost;
      lambda = std::max(lambda * 0.3, 1e-12);
      if (delta.norm() < 1e-14) break;
    } else {
      lambda *= 10;
      if (lambda > 1e10) break;
    }
  }
}

}  // namespace

std::vector<TriangulatedPoint> triangulate_tracks(
    const std::vector<std::vector<TrackObservation>>& tracks,
    const std::vector<CameraPose>& view_poses, const PinholeIntrinsics& K,
    double min_angle_deg, double max_reproj_px) {
  std::vector<RigidCW> cams(view_poses.size());
  for (size_t i = 0; i < view_poses.size(); ++i) {
    cams[i].R = view_poses[i].rotation.conjugate().toRotationMatrix();
    cams[i].t = -(cams[i].R * view_poses[i].translation);
  }

  const double cos_min = std::cos(min_angle_deg * M_PI / 180.0);
  std::vector<TriangulatedPoint> points;
  for (const auto& track : tracks) {
    if (track.size() < 2) continue;

    Eigen::MatrixXd A(2 * track.size(), 4);
    bool ok = true;
    for (size_t i = 0; i < track.size(); ++i) {
      const auto& obs = track[i];
      if (obs.view < 0 || obs.view >= int(cams.size())) {
        ok = false;
        break;
      }
      const auto& cam = cams[obs.view];
      const double xn = (obs.pixel.x() - K.cx) / K.fx;
      const double yn = (obs.pixel.y() - K.cy) / K.fy;
      Eigen::Matrix<double, 3, 4> P;
      P.leftCols<3>() = cam.R;
      P.col(3) = cam.t;
      A.row(2 * i) = xn * P.row(2) - P.row(0);
      A.row(2 * i + 1) = yn * P.row(2) - P.row(1);
    }
    if (!ok) continue;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
    const Eigen::Vector4d Xh = svd.matrixV().col(3);
    if (std::abs(Xh(3)) < 1e-14) continue;
    const Vec3 X = Xh.head<3>() / Xh(3);

    // Cheirality + reprojection in every view.
    bool valid = true;
    for (const auto& obs : track) {
      const Vec3 pc = cams[obs.view].apply(X);
      if (pc.z() <= kZNear) {
        valid = false;
        break;
      }
      const Vec2 proj(K.fx * pc.x() / pc.z() + K.cx,
                      K.fy * pc.y() / pc.z() + K.cy);
      if ((proj - obs.pixel).norm() > max_reproj_px) {
        valid = false;
        break;
      }
    }
    if (!valid) continue;

    // Maximum pairwise triangulation angle.
    double best_cos = 1.0;
    for (size_t i = 0; i < track.size() && valid; ++i)
      for (size_t j = i + 1; j < track.size(); ++j) {
        const Vec3 ri = (X - view_poses[track[i].view].translation).normalized();
        const Vec3 rj = (X - view_poses[track[j].view].translation).normalized();
        best_cos = std::min(best_cos, ri.dot(rj));
      }
    if (best_cos > cos_min) continue;  // all rays nearly parallel

    points.push_back({X, track});
  }
  return points;
}

PnPResult pnp_ransac(const std::vector<Correspondence2D3D>& corrs,
                     const PinholeIntrinsics& K, double threshold_px,
                     int max_iters, uint64_t seed) {
  if (corrs.size() < 6)
    throw std::invalid_argument("pnp_ransac needs >= 6 correspondences, got " +
                                std::to_string(corrs.size()));

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const size_t n = corrs.size();
  std::vector<int> sample(6);
  RigidCW best{Mat3::Identity(), Vec3::Zero()};
  int best_inliers = -1;

  for (int it = 0; it < max_iters; ++it) {
    // Sample 6 distinct indices.
    for (int k = 0; k < 6; ++k) {
      bool fresh;
      do {
        sample[k] = int(rng() % n);
        fresh = true;
        for (int j = 0; j < k; ++j)
          if (sample[j] == sample[k]) fresh = false;
      } while (!fresh);
    }
    RigidCW T;
    if (!dlt_pose(corrs, sample, K, T)) continue;
    int count = 0;
    for (size_t i = 0; i < n; ++i)
      if (reproj_error_px(T, corrs[i].point, corrs[i].pixel, K) <= threshold_px)
        ++count;
    if (count > best_inliers) {
      best_inliers = count;
      best = T;
      if (count == int(n)) break;
    }
  }
  if (best_inliers < kMinPnPInliers) throw RansacFailed(std::max(best_inliers, 0));

  PnPResult res;
  res.inliers.reserve(best_inliers);
  for (size_t i = 0; i < n; ++i)
    if (reproj_error_px(best, corrs[i].point, corrs[i].pixel, K) <= threshold_px)
      res.inliers.push_back(int(i));
  refine_pose(corrs, res.inliers, K, best);

  // Refinement can shift the boundary; recompute the inlier set once.
  res.inliers.clear();
  for (size_t i = 0; i < n; ++i)
    if (reproj_error_px(best, corrs[i].point, corrs[i].pixel, K) <= threshold_px)
      res.inliers.push_back(int(i));
  if (int(res.inliers.size()) < kMinPnPInliers)
    throw RansacFailed(int(res.inliers.size()));
  res.pose = best.to_pose();
  return res;
}

}  // namespace gsloc
