#include "subvox/geometry.h"

namespace subvox {

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

RigidTransform relativeTransform(const RigidTransform& t_g_a,
                                 const RigidTransform& t_g_b) {
  return compose(t_g_a.inverse(), t_g_b);
}

Eigen::Matrix3d skewMatrix(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0, -v.z(), v.y(),  //
      v.z(), 0, -v.x(),   //
      -v.y(), v.x(), 0;
  return s;
}

Eigen::Quaterniond expRotation(const Eigen::Vector3d& omega) {
  const double angle = omega.norm();
  if (angle < 1e-12) {
    Eigen::Quaterniond q(1.0, 0.5 * omega.x(), 0.5 * omega.y(),
                         0.5 * omega.z());
    return q.normalized();
  }
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, omega / angle));
}

double rotationAngle(const Eigen::Quaterniond& q) {
  const double w = std::min(1.0, std::abs(q.normalized().w()));
  return 2.0 * std::acos(w);
}

std::pair<double, double> poseDelta(const RigidTransform& a,
                                    const RigidTransform& b) {
  const RigidTransform d = relativeTransform(a, b);
  return {d.translation.norm(), rotationAngle(d.rotation)};
}

RigidTransform lookAt(const Eigen::Vector3d& position,
                      const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up) {
  const Eigen::Vector3d forward = (target - position).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-9) {
    right = forward.cross(Eigen::Vector3d(0, 1, 0));
  }
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right).normalized();
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return RigidTransform(Eigen::Quaterniond(r), position);
}

std::vector<ColoredPoint> depthToPointcloud(const DepthFrame& frame) {
  std::vector<ColoredPoint> cloud;
  cloud.reserve(frame.depth.size());
  const PinholeCamera& cam = frame.camera;
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const float d = frame.depthAt(u, v);
      if (!std::isfinite(d)) {
        continue;
      }
      cloud.push_back({cam.backProject(u, v, d), frame.colorAt(u, v)});
    }
  }
  return cloud;
}

}  // namespace subvox
