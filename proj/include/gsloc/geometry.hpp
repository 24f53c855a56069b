#ifndef GSLOC_GEOMETRY_HPP_
#define GSLOC_GEOMETRY_HPP_

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

struct BehindCamera : std::runtime_error {
  explicit BehindCamera(double z)
      : std::runtime_error("point behind camera, z=" + std::to_string(z)) {}
};

struct DegenerateConfiguration : std::runtime_error {
  explicit DegenerateConfiguration(const std::string& what)
      : std::runtime_error(what) {}
};

// Rigid world-from-camera pose. translation is the camera center in world
// coordinates; applying the pose maps camera-frame points to world.
// The quaternion is kept unit-norm with w >= 0 (canonical sign).
struct CameraPose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  CameraPose() = default;
  CameraPose(const Quat& q, const Vec3& t) : rotation(q), translation(t) {
    canonicalize();
  }

  void canonicalize() {
    rotation.normalize();
    if (rotation.w() < 0) rotation.coeffs() = -rotation.coeffs();
  }

  Vec3 apply(const Vec3& p_cam) const { return rotation * p_cam + translation; }
  Vec3 world_to_camera(const Vec3& p_world) const {
    return rotation.conjugate() * (p_world - translation);
  }
  CameraPose inverse() const {
    Quat qi = rotation.conjugate();
    return CameraPose(qi, -(qi * translation));
  }
  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation.toRotationMatrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

// Similarity transform x -> scale * R * x + t.
struct Sim3Transform {
  double scale = 1.0;
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

struct PinholeIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  bool valid() const {
    return fx > 0 && fy > 0 && cx > 0 && cx < width && cy > 0 && cy < height;
  }
  PinholeIntrinsics scaled(double s) const {
    return {fx * s, fy * s, cx * s, cy * s,
            std::max(1, int(width * s)), std::max(1, int(height * s))};
  }
};

inline constexpr double kZNear = 0.01;

// a o b: applying the result equals applying b then a.
CameraPose pose_compose(const CameraPose& a, const CameraPose& b);

struct Projection {
  double u, v;  // pixels
  double z;     // camera-frame depth, meters
};

// Pinhole projection of a world point. Throws BehindCamera if z <= z_near.
Projection project_point(const Vec3& p_world, const CameraPose& pose,
                         const PinholeIntrinsics& K, double z_near = kZNear);

// Camera-frame point for pixel (u, v) at depth z.
Vec3 back_project(double u, double v, double z, const PinholeIntrinsics& K);

// Least-squares Sim(3) (SE(3) when with_scale is off) mapping source onto
// target. Throws DegenerateConfiguration for < 3 or collinear points.
Sim3Transform umeyama_align(const std::vector<Vec3>& source,
                            const std::vector<Vec3>& target, bool with_scale);

struct TimedPose {
  double timestamp = 0;
  CameraPose pose;
};

// TUM layout: `timestamp tx ty tz qx qy qz qw`, '#' comments.
std::vector<TimedPose> load_trajectory(const std::string& path);
void save_trajectory(const std::string& path, const std::vector<TimedPose>& traj);

}  // namespace gsloc

#endif
