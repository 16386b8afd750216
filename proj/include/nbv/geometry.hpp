#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace nbv {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Positions closer than this to the object center cannot define a gaze.
inline constexpr double kDegeneratePositionEps = 1e-9;

/// A 6-DOF sensor pose: world-frame position plus Tait-Bryan yaw/pitch/roll.
///
/// The sensor looks along its local +X axis. Yaw rotates about world +Z,
/// pitch tilts the director ray above (positive) or below (negative) the
/// horizontal plane, roll spins about the director ray.
struct View {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;

  Mat3 rotation() const;
  Vec3 director() const;
};

struct Orientation {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

/// R = Rz(yaw) * Ry(pitch) * Rx(roll), intrinsic Z-Y-X. The pitch factor is
/// oriented so that R * (+X) has z-component sin(pitch).
Mat3 rotation_from_tait_bryan(double yaw, double pitch, double roll);

/// Orientation that aims the sensor at `center` from `position`; roll is 0.
/// Throws Errc::DegeneratePosition when the two points coincide.
Orientation orientation_from_position(const Vec3& position, const Vec3& center);

/// Unit vector from `position` towards `center`.
Vec3 director_ray(const Vec3& position, const Vec3& center);

/// Componentwise k * p. Throws Errc::InvalidScale for k <= 0.
Vec3 scale_position(const Vec3& p, double k);

/// Multiplier that moves a unit-radius prediction to the distance at which an
/// object of `object_major_span` fits inside the narrowest half-angle.
double compute_scale_factor(double min_fov_half_angle, double object_major_span,
                            double unit_radius);

/// View placed at `position` gazing at `center`.
View look_at(const Vec3& position, const Vec3& center);

}  // namespace nbv
