#include "nbv/planners.hpp"

#include <cmath>
#include <numbers>

#include "nbv/error.hpp"

namespace nbv {

namespace {

const double kGoldenAngle = std::numbers::pi * (3.0 - std::sqrt(5.0));

void check_sphere_args(double radius, int count) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw Error(Errc::InvalidGeometry, "view sphere radius must be positive");
  }
  if (count < 1) throw Error(Errc::InvalidGeometry, "view sphere needs at least one view");
}

// Pulls the first and last rows away from the ends of the z range; with the
// plain half-step offset the polar points crowd together.
constexpr double kEndOffset = 1.5;

// Lattice point i of n with z uniform in [z_lo, z_hi] on the unit sphere.
Vec3 lattice_point(int i, int n, double z_lo, double z_hi) {
  const double f = (i + kEndOffset) / (n - 1 + 2 * kEndOffset);
  const double z = z_hi - f * (z_hi - z_lo);
  const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
  const double phi = i * kGoldenAngle;
  return {rho * std::cos(phi), rho * std::sin(phi), z};
}

ViewSphere build(const Vec3& center, double radius, int count, double z_lo, double z_hi) {
  ViewSphere s{center, radius, {}};
  s.views.reserve(count);
  for (int i = 0; i < count; ++i) {
    s.views.push_back(look_at(center + radius * lattice_point(i, count, z_lo, z_hi), center));
  }
  return s;
}

net::Tensor grid_input(const OccupancyGrid& grid, const net::NbvNet& net) {
  const std::vector<float> x = to_input_tensor(grid);
  net::Shape shape{1};
  shape.insert(shape.end(), net.input_shape().begin(), net.input_shape().end());
  if (net::shape_size(shape) != x.size()) {
    throw Error(Errc::ShapeMismatch, "network input " + net::shape_string(net.input_shape()) +
                                         " does not fit a 32^3 grid");
  }
  return net::Tensor(shape, std::vector<double>(x.begin(), x.end()));
}

}  // namespace

ViewSphere generate_view_sphere(const Vec3& center, double radius, int count) {
  check_sphere_args(radius, count);
  return build(center, radius, count, -1.0, 1.0);
}

ViewSphere generate_view_cap(const Vec3& center, double radius, int count, double min_z) {
  check_sphere_args(radius, count);
  const double z_lo = std::clamp((min_z - center.z()) / radius, -1.0, 1.0);
  if (z_lo >= 1.0) throw Error(Errc::InvalidGeometry, "view cap lies entirely below min_z");
  return build(center, radius, count, z_lo, 1.0);
}

ViewScore score_view(const OccupancyGrid& grid, const View& view, const RangeCamera& camera) {
  std::vector<std::uint8_t> seen(grid.size(), 0);
  std::size_t unknown = 0, occupied = 0;
  for (const Vec3& dir : camera.world_rays(view)) {
    const auto hit = raycast(grid, view.position, dir, camera.max_range);
    if (!hit) continue;
    std::uint8_t& mark = seen[grid.linear(hit->index)];
    if (mark) continue;
    mark = 1;
    if (hit->state == VoxelState::Unknown) {
      ++unknown;
    } else {
      ++occupied;
    }
  }
  ViewScore s;
  s.view = view;
  s.gain = unknown;
  const std::size_t hits = unknown + occupied;
  s.overlap = hits ? static_cast<double>(occupied) / static_cast<double>(hits) : 0.0;
  return s;
}

std::size_t exhaustive_nbv_index(const OccupancyGrid& grid, const ViewSphere& sphere,
                                 const RangeCamera& camera, double overlap_min) {
  if (sphere.views.empty()) throw Error(Errc::EmptyCandidateSet, "no candidate views");
  std::size_t best_any = 0, best_feasible = 0;
  std::size_t gain_any = 0, gain_feasible = 0;
  bool any = false, feasible = false;
  for (std::size_t i = 0; i < sphere.views.size(); ++i) {
    const ViewScore s = score_view(grid, sphere.views[i], camera);
    if (!any || s.gain > gain_any) {
      best_any = i;
      gain_any = s.gain;
      any = true;
    }
    if (s.overlap >= overlap_min && (!feasible || s.gain > gain_feasible)) {
      best_feasible = i;
      gain_feasible = s.gain;
      feasible = true;
    }
  }
  return feasible ? best_feasible : best_any;
}

View exhaustive_nbv(const OccupancyGrid& grid, const ViewSphere& sphere,
                    const RangeCamera& camera, double overlap_min) {
  return sphere.views[exhaustive_nbv_index(grid, sphere, camera, overlap_min)];
}

std::size_t classification_nbv_index(const OccupancyGrid& grid, const net::NbvNet& net,
                                     const std::vector<View>& class_views) {
  if (net.output_width() != class_views.size()) {
    throw Error(Errc::ArityMismatch, "network has " + std::to_string(net.output_width()) +
                                         " outputs for " + std::to_string(class_views.size()) +
                                         " class views");
  }
  if (class_views.size() == 1) return 0;
  const net::Tensor out = net.infer(grid_input(grid, net));
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i] > out[best]) best = i;
  }
  return best;
}

View classification_nbv(const OccupancyGrid& grid, const net::NbvNet& net,
                        const std::vector<View>& class_views) {
  return class_views[classification_nbv_index(grid, net, class_views)];
}

View regression_nbv(const OccupancyGrid& grid, const net::NbvNet& net, double k,
                    const Vec3& center) {
  if (net.output_width() != 3) {
    throw Error(Errc::ArityMismatch, "regression needs 3 outputs, the network has " +
                                         std::to_string(net.output_width()));
  }
  const net::Tensor out = net.infer(grid_input(grid, net));
  const Vec3 s = scale_position(Vec3(out[0], out[1], out[2]), k);
  return look_at(s, center);
}

}  // namespace nbv
