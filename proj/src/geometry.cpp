#include "nbv/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nbv/error.hpp"

namespace nbv {

Mat3 rotation_from_tait_bryan(double yaw, double pitch, double roll) {
  const double ca = std::cos(yaw), sa = std::sin(yaw);
  const double cb = std::cos(pitch), sb = std::sin(pitch);
  const double cg = std::cos(roll), sg = std::sin(roll);

  Mat3 rz;
  rz << ca, -sa, 0.0,
        sa, ca, 0.0,
        0.0, 0.0, 1.0;
  // Rotation about -Y so that positive pitch raises the +X axis.
  Mat3 ry;
  ry << cb, 0.0, -sb,
        0.0, 1.0, 0.0,
        sb, 0.0, cb;
  Mat3 rx;
  rx << 1.0, 0.0, 0.0,
        0.0, cg, -sg,
        0.0, sg, cg;
  return rz * ry * rx;
}

Mat3 View::rotation() const { return rotation_from_tait_bryan(yaw, pitch, roll); }

Vec3 View::director() const {
  // First column of R; roll does not move the optical axis.
  const double cb = std::cos(pitch);
  return {std::cos(yaw) * cb, std::sin(yaw) * cb, std::sin(pitch)};
}

Vec3 director_ray(const Vec3& position, const Vec3& center) {
  const Vec3 d = center - position;
  const double n = d.norm();
  if (!(n > kDegeneratePositionEps)) {
    throw Error(Errc::DegeneratePosition,
                "position coincides with the object center");
  }
  return d / n;
}

Orientation orientation_from_position(const Vec3& position, const Vec3& center) {
  const Vec3 r = director_ray(position, center);
  Orientation o;
  o.yaw = std::atan2(r.y(), r.x());
  o.pitch = std::asin(std::clamp(r.z(), -1.0, 1.0));
  o.roll = 0.0;
  return o;
}

Vec3 scale_position(const Vec3& p, double k) {
  if (!(k > 0.0)) throw Error(Errc::InvalidScale, "scale factor must be positive");
  return k * p;
}

double compute_scale_factor(double min_fov_half_angle, double object_major_span,
                            double unit_radius) {
  if (!(min_fov_half_angle > 0.0 && min_fov_half_angle < std::numbers::pi / 2) ||
      !(object_major_span > 0.0) || !(unit_radius > 0.0)) {
    throw Error(Errc::InvalidGeometry,
                "scale factor needs 0 < half-angle < pi/2 and positive span and radius");
  }
  const double distance = 0.5 * object_major_span / std::tan(min_fov_half_angle);
  return distance / unit_radius;
}

View look_at(const Vec3& position, const Vec3& center) {
  const Orientation o = orientation_from_position(position, center);
  return View{position, o.yaw, o.pitch, 0.0};
}

}  // namespace nbv
