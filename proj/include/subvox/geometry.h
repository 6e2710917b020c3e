#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <vector>

namespace subvox {

struct Color {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  bool operator==(const Color&) const = default;
};

/// Rigid body transform on SE(3). Maps points as p' = rotation * p + translation.
/// Quaternion convention: Hamilton, stored/serialized as (w, x, y, z), always
/// kept at unit norm.
struct RigidTransform {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  RigidTransform() = default;
  RigidTransform(const Eigen::Quaterniond& q, const Eigen::Vector3d& t)
      : rotation(q.normalized()), translation(t) {}

  static RigidTransform identity() { return RigidTransform(); }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  RigidTransform inverse() const {
    const Eigen::Quaterniond q_inv = rotation.conjugate();
    return RigidTransform(q_inv, -(q_inv * translation));
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation.toRotationMatrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

/// Composition on SE(3): the result applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

/// Relative transform between two frames given in a common frame G:
/// returns (T_GA)^-1 composed with T_GB, mapping B-frame points into A.
RigidTransform relativeTransform(const RigidTransform& t_g_a,
                                 const RigidTransform& t_g_b);

Eigen::Matrix3d skewMatrix(const Eigen::Vector3d& v);

/// SO(3) exponential map from an axis-angle vector.
Eigen::Quaterniond expRotation(const Eigen::Vector3d& omega);

/// Rotation angle in [0, pi] of a unit quaternion.
double rotationAngle(const Eigen::Quaterniond& q);

/// Translation norm and rotation angle of a^-1 * b.
std::pair<double, double> poseDelta(const RigidTransform& a,
                                    const RigidTransform& b);

/// Camera frame with z forward, x right, y down, positioned at `position`
/// looking toward `target`. Returns T_G_camera.
RigidTransform lookAt(const Eigen::Vector3d& position,
                      const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up = Eigen::Vector3d(0, 0, 1));

struct PinholeCamera {
  double fx = 0;
  double fy = 0;
  double cx = 0;
  double cy = 0;
  int width = 0;
  int height = 0;

  bool valid() const {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 &&
           cx < width && cy >= 0 && cy < height;
  }

  /// Back-projects pixel (u, v) at depth d into the camera frame.
  Eigen::Vector3d backProject(double u, double v, double depth) const {
    return {(u - cx) * depth / fx, (v - cy) * depth / fy, depth};
  }

  /// Projects a camera-frame point to pixel coordinates. Caller checks z > 0.
  Eigen::Vector2d project(const Eigen::Vector3d& p) const {
    return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
  }
};

/// Depth + color image pair. Depth in meters, NaN marks invalid pixels.
struct DepthFrame {
  std::vector<float> depth;  // row-major, height * width
  std::vector<Color> color;  // row-major, same size (may be empty)
  PinholeCamera camera;
  double timestamp = 0.0;

  float depthAt(int u, int v) const { return depth[v * camera.width + u]; }
  Color colorAt(int u, int v) const {
    return color.empty() ? Color{} : color[v * camera.width + u];
  }
};

struct ColoredPoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // camera frame
  Color color;
};

/// One point per finite-depth pixel, back-projected through the pinhole model.
std::vector<ColoredPoint> depthToPointcloud(const DepthFrame& frame);

}  // namespace subvox
