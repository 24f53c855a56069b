#include "gsloc/geometry.hpp"

#include <Eigen/SVD>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gsloc {

CameraPose pose_compose(const CameraPose& a, const CameraPose& b) {
  return CameraPose(a.rotation * b.rotation,
                    a.rotation * b.translation + a.translation);
}

Projection project_point(const Vec3& p_world, const CameraPose& pose,
                         const PinholeIntrinsics& K, double z_near) {
  const Vec3 pc = pose.world_to_camera(p_world);
  if (pc.z() <= z_near) throw BehindCamera(pc.z());
  return {K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy, pc.z()};
}

Vec3 back_project(double u, double v, double z, const PinholeIntrinsics& K) {
  return {(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z};
}

Sim3Transform umeyama_align(const std::vector<Vec3>& source,
                            const std::vector<Vec3>& target, bool with_scale) {
  const size_t n = source.size();
  if (n < 3 || target.size() != n)
    throw DegenerateConfiguration("umeyama_align needs >= 3 correspondences");

  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mu_s += source[i];
    mu_t += target[i];
  }
  mu_s /= double(n);
  mu_t /= double(n);

  Mat3 cov = Mat3::Zero();
  double var_s = 0;
  for (size_t i = 0; i < n; ++i) {
    const Vec3 ds = source[i] - mu_s;
    cov += (target[i] - mu_t) * ds.transpose();
    var_s += ds.squaredNorm();
  }
  cov /= double(n);
  var_s /= double(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // Rank check: a rotation is determined only if at least two singular values
  // are non-negligible (collinear points leave one direction free).
  if (sv(0) <= 0 || sv(1) <= 1e-10 * sv(0))
    throw DegenerateConfiguration("umeyama_align: collinear/degenerate points");

  Vec3 d = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d(2) = -1;
  const Mat3 R = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();

  Sim3Transform out;
  out.rotation = Quat(R);
  out.rotation.normalize();
  if (with_scale && var_s > 0) out.scale = sv.dot(d) / var_s;
  out.translation = mu_t - out.scale * (R * mu_s);
  return out;
}

std::vector<TimedPose> load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
  std::vector<TimedPose> traj;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double ts, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw std::runtime_error("malformed trajectory line in " + path + ": " + line);
    traj.push_back({ts, CameraPose(Quat(qw, qx, qy, qz), Vec3(tx, ty, tz))});
  }
  return traj;
}

void save_trajectory(const std::string& path, const std::vector<TimedPose>& traj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectory file: " + path);
  out << "# timestamp tx ty tz qx qy qz qw  (world-from-camera)\n";
  char buf[256];
  for (const auto& tp : traj) {
    const auto& p = tp.pose;
    std::snprintf(buf, sizeof(buf),
                  "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", tp.timestamp,
                  p.translation.x(), p.translation.y(), p.translation.z(),
                  p.rotation.x(), p.rotation.y(), p.rotation.z(), p.rotation.w());
    out << buf;
  }
}

}  // namespace gsloc
