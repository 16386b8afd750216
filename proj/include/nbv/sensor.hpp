#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nbv/geometry.hpp"
#include "nbv/voxel_grid.hpp"

namespace nbv {

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 size() const { return hi - lo; }
  bool empty() const { return (lo.array() > hi.array()).any(); }
};

inline constexpr double kMinTriangleArea = 1e-12;

/// Triangle soup in meters; faces hold zero-based vertex indices.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  Aabb bounds() const;
  double triangle_area(std::size_t face) const;
  double surface_area() const;
  /// Throws Errc::ParseError for out-of-range indices and
  /// Errc::DegenerateTriangle for faces with area <= kMinTriangleArea.
  void validate() const;
};

Mesh load_mesh(const std::filesystem::path& path);
Mesh parse_mesh(std::istream& in, const std::string& source_name = "<stream>");
void write_mesh(const Mesh& mesh, std::ostream& out);
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);

/// Returns `m` transformed by p -> rotation * p + translation.
Mesh transform(const Mesh& m, const Mat3& rotation, const Vec3& translation);
Mesh merge(const Mesh& a, const Mesh& b);

struct RangeCamera {
  double fov_h = 0.785398163397448309616;  // 45 degrees
  double fov_v = 0.785398163397448309616;
  int res_u = 64;
  int res_v = 64;
  double min_range = 0.1;
  double max_range = 10.0;
  double noise_sigma = 0.0;

  void validate() const;
  std::size_t pixel_count() const { return static_cast<std::size_t>(res_u) * res_v; }
  /// Unit ray directions in the sensor frame (+X forward, +Y left, +Z up),
  /// row-major over pixels (v outer, u inner).
  std::vector<Vec3> local_rays() const;
  /// local_rays() rotated into the world frame for `view`.
  std::vector<Vec3> world_rays(const View& view) const;
};

struct Triangle {
  Vec3 v0, e1, e2;
};

/// Immutable sensing scene: triangle meshes plus an optional infinite table
/// plane z = table_z.
class Scene {
 public:
  Scene() = default;
  explicit Scene(std::vector<Mesh> meshes, std::optional<double> table_z = std::nullopt);

  const std::vector<Mesh>& meshes() const { return meshes_; }
  const std::optional<double>& table_z() const { return table_z_; }

  /// Nearest intersection distance along a unit ray, within [t_min, t_max].
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir, double t_min,
                                  double t_max) const;

 private:
  struct Part {
    Aabb box;
    std::size_t first = 0;
    std::size_t count = 0;
  };
  std::vector<Mesh> meshes_;
  std::optional<double> table_z_;
  std::vector<Triangle> triangles_;
  std::vector<Part> parts_;
};

/// Moller-Trumbore ray/triangle test; returns the ray parameter of the hit.
std::optional<double> intersect_triangle(const Triangle& tri, const Vec3& origin,
                                         const Vec3& dir);

/// Simulated range image: one ray per pixel, nearest hit kept when its range is
/// within [min_range, max_range]. Output points are in the world frame and in
/// pixel order. Range noise (camera.noise_sigma > 0) is drawn from `noise_seed`.
PointCloud render_scan(const Scene& scene, const View& view, const RangeCamera& camera,
                       std::uint64_t noise_seed = 0);

void write_cloud(const PointCloud& cloud, std::ostream& out);

}  // namespace nbv
