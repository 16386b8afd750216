#include "nbv/sensor.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "nbv/error.hpp"
#include "nbv/random.hpp"

namespace nbv {

Aabb Mesh::bounds() const {
  Aabb box;
  for (const Vec3& v : vertices) box.extend(v);
  return box;
}

double Mesh::triangle_area(std::size_t face) const {
  const auto& f = faces[face];
  const Vec3& a = vertices[f[0]];
  return 0.5 * (vertices[f[1]] - a).cross(vertices[f[2]] - a).norm();
}

double Mesh::surface_area() const {
  double total = 0.0;
  for (std::size_t i = 0; i < faces.size(); ++i) total += triangle_area(i);
  return total;
}

void Mesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (std::size_t i = 0; i < faces.size(); ++i) {
    for (int idx : faces[i]) {
      if (idx < 0 || idx >= n) {
        throw Error(Errc::ParseError, "face " + std::to_string(i) +
                                          " references vertex " + std::to_string(idx) +
                                          " outside [0, " + std::to_string(n) + ")");
      }
    }
    if (!(triangle_area(i) > kMinTriangleArea)) {
      throw Error(Errc::DegenerateTriangle, "face " + std::to_string(i) + " is degenerate");
    }
  }
}

Mesh parse_mesh(std::istream& in, const std::string& source_name) {
  Mesh mesh;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw Error(Errc::ParseError, source_name + ":" + std::to_string(line_no) + ": " + why);
  };
  std::vector<std::pair<std::array<long, 3>, int>> pending;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) fail("malformed vertex");
      if (!v.allFinite()) fail("non-finite vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<long> idx;
      std::string tok;
      while (ls >> tok) {
        // Accept "i", "i/t", "i/t/n" and "i//n" and keep the vertex index.
        const std::string head = tok.substr(0, tok.find('/'));
        char* end = nullptr;
        const long value = std::strtol(head.c_str(), &end, 10);
        if (head.empty() || *end != '\0') fail("malformed face index '" + tok + "'");
        idx.push_back(value);
      }
      if (idx.size() < 3) fail("face needs at least three vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        pending.push_back({{idx[0], idx[k], idx[k + 1]}, line_no});
      }
    }
  }
  const long n = static_cast<long>(mesh.vertices.size());
  for (const auto& [f, at] : pending) {
    std::array<int, 3> face{};
    for (int k = 0; k < 3; ++k) {
      if (f[k] < 1 || f[k] > n) {
        line_no = at;
        fail("face index " + std::to_string(f[k]) + " out of range 1.." + std::to_string(n));
      }
      face[k] = static_cast<int>(f[k] - 1);
    }
    mesh.faces.push_back(face);
  }
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    if (!(mesh.triangle_area(i) > kMinTriangleArea)) {
      throw Error(Errc::DegenerateTriangle, source_name + ": face " + std::to_string(i) +
                                                " (line " + std::to_string(pending[i].second) +
                                                ") is degenerate");
    }
  }
  return mesh;
}

Mesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open mesh " + path.string());
  return parse_mesh(in, path.string());
}

void write_mesh(const Mesh& mesh, std::ostream& out) {
  char buf[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const auto& f : mesh.faces) {
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write mesh " + path.string());
  write_mesh(mesh, out);
}

Mesh transform(const Mesh& m, const Mat3& rotation, const Vec3& translation) {
  Mesh out = m;
  for (Vec3& v : out.vertices) v = rotation * v + translation;
  return out;
}

Mesh merge(const Mesh& a, const Mesh& b) {
  Mesh out = a;
  const int offset = static_cast<int>(a.vertices.size());
  out.vertices.insert(out.vertices.end(), b.vertices.begin(), b.vertices.end());
  for (auto f : b.faces) {
    for (int& i : f) i += offset;
    out.faces.push_back(f);
  }
  return out;
}

void RangeCamera::validate() const {
  const double pi = std::numbers::pi;
  if (!(fov_h > 0.0 && fov_h < pi) || !(fov_v > 0.0 && fov_v < pi) || res_u < 1 ||
      res_v < 1 || !(min_range >= 0.0) || !(min_range < max_range) || !(noise_sigma >= 0.0)) {
    throw Error(Errc::InvalidGeometry, "invalid range camera intrinsics");
  }
}

std::vector<Vec3> RangeCamera::local_rays() const {
  std::vector<Vec3> rays;
  rays.reserve(pixel_count());
  const double th = std::tan(0.5 * fov_h);
  const double tv = std::tan(0.5 * fov_v);
  for (int v = 0; v < res_v; ++v) {
    const double yn = 2.0 * (v + 0.5) / res_v - 1.0;
    for (int u = 0; u < res_u; ++u) {
      const double xn = 2.0 * (u + 0.5) / res_u - 1.0;
      rays.push_back(Vec3(1.0, -xn * th, -yn * tv).normalized());
    }
  }
  return rays;
}

std::vector<Vec3> RangeCamera::world_rays(const View& view) const {
  std::vector<Vec3> rays = local_rays();
  const Mat3 r = view.rotation();
  for (Vec3& d : rays) d = r * d;
  return rays;
}

std::optional<double> intersect_triangle(const Triangle& tri, const Vec3& origin,
                                         const Vec3& dir) {
  // Barycentric slack keeps rays through shared edges and vertices from
  // slipping between neighbouring faces.
  constexpr double kSlack = 1e-10;
  const Vec3 p = dir.cross(tri.e2);
  const double det = tri.e1.dot(p);
  if (std::abs(det) < 1e-300) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - tri.v0;
  const double u = s.dot(p) * inv;
  if (u < -kSlack || u > 1.0 + kSlack) return std::nullopt;
  const Vec3 q = s.cross(tri.e1);
  const double v = dir.dot(q) * inv;
  if (v < -kSlack || u + v > 1.0 + kSlack) return std::nullopt;
  return tri.e2.dot(q) * inv;
}

namespace {

bool ray_hits_box(const Aabb& box, const Vec3& o, const Vec3& d, double t0, double t1) {
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < box.lo[a] || o[a] > box.hi[a]) return false;
      continue;
    }
    double ta = (box.lo[a] - o[a]) / d[a];
    double tb = (box.hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

Scene::Scene(std::vector<Mesh> meshes, std::optional<double> table_z)
    : meshes_(std::move(meshes)), table_z_(table_z) {
  for (const Mesh& m : meshes_) {
    m.validate();
    Part part;
    part.first = triangles_.size();
    for (const auto& f : m.faces) {
      const Vec3& a = m.vertices[f[0]];
      triangles_.push_back({a, m.vertices[f[1]] - a, m.vertices[f[2]] - a});
    }
    part.count = m.faces.size();
    part.box = m.bounds();
    // Pad so that axis-aligned faces are not lost to the slab test.
    part.box.lo.array() -= 1e-9;
    part.box.hi.array() += 1e-9;
    parts_.push_back(part);
  }
}

std::optional<double> Scene::intersect(const Vec3& origin, const Vec3& dir, double t_min,
                                       double t_max) const {
  double best = std::numeric_limits<double>::infinity();
  for (const Part& part : parts_) {
    if (!ray_hits_box(part.box, origin, dir, t_min, std::min(t_max, best))) continue;
    for (std::size_t i = part.first; i < part.first + part.count; ++i) {
      if (auto t = intersect_triangle(triangles_[i], origin, dir)) {
        if (*t >= t_min && *t <= t_max && *t < best) best = *t;
      }
    }
  }
  if (table_z_ && dir.z() != 0.0) {
    const double t = (*table_z_ - origin.z()) / dir.z();
    if (t >= t_min && t <= t_max && t < best) best = t;
  }
  if (std::isinf(best)) return std::nullopt;
  return best;
}

PointCloud render_scan(const Scene& scene, const View& view, const RangeCamera& camera,
                       std::uint64_t noise_seed) {
  PointCloud cloud;
  cloud.origin = view.position;
  const std::vector<Vec3> rays = camera.world_rays(view);
  cloud.points.reserve(rays.size());
  Rng rng(noise_seed);
  for (const Vec3& d : rays) {
    // The nearest surface decides occlusion; range limits are applied after,
    // so a too-close occluder still hides what lies behind it.
    auto t = scene.intersect(view.position, d, 0.0, camera.max_range);
    if (!t) continue;
    double range = *t;
    if (camera.noise_sigma > 0.0) range += camera.noise_sigma * rng.normal();
    if (range < camera.min_range || range > camera.max_range) continue;
    cloud.points.push_back(view.position + range * d);
  }
  return cloud;
}

void write_cloud(const PointCloud& cloud, std::ostream& out) {
  char buf[96];
  for (const Vec3& p : cloud.points) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
    out << buf;
  }
}

}  // namespace nbv
