#include "nbv/shapes.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "nbv/error.hpp"

namespace nbv::shapes {

namespace {

constexpr double kPi = std::numbers::pi;

int add_vertex(Mesh& m, const Vec3& v) {
  m.vertices.push_back(v);
  return static_cast<int>(m.vertices.size()) - 1;
}

}  // namespace

Mesh icosphere(int subdivisions, double radius) {
  Mesh m;
  // Icosahedron with poles on the z axis and two staggered rings of five.
  const double ring_z = 1.0 / std::sqrt(5.0);
  const double ring_r = 2.0 / std::sqrt(5.0);
  add_vertex(m, {0, 0, 1});
  add_vertex(m, {0, 0, -1});
  for (int i = 0; i < 5; ++i) {
    const double a = 2.0 * kPi * i / 5.0;
    add_vertex(m, {ring_r * std::cos(a), ring_r * std::sin(a), ring_z});
  }
  for (int i = 0; i < 5; ++i) {
    const double a = 2.0 * kPi * (i + 0.5) / 5.0;
    add_vertex(m, {ring_r * std::cos(a), ring_r * std::sin(a), -ring_z});
  }
  for (int i = 0; i < 5; ++i) {
    const int u0 = 2 + i, u1 = 2 + (i + 1) % 5;
    const int l0 = 7 + i, l1 = 7 + (i + 1) % 5;
    m.faces.push_back({0, u0, u1});
    m.faces.push_back({u0, l0, u1});
    m.faces.push_back({u1, l0, l1});
    m.faces.push_back({1, l1, l0});
  }

  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoints;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      const int idx = add_vertex(m, (m.vertices[a] + m.vertices[b]).normalized());
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(m.faces.size() * 4);
    for (const auto& f : m.faces) {
      const int ab = midpoint(f[0], f[1]);
      const int bc = midpoint(f[1], f[2]);
      const int ca = midpoint(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.faces = std::move(next);
  }
  for (Vec3& v : m.vertices) v *= radius;
  return m;
}

Mesh box(const Vec3& h) {
  Mesh m;
  for (int i = 0; i < 8; ++i) {
    add_vertex(m, {(i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z()});
  }
  // Outward-wound quads split into two triangles each.
  const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                           {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& q : quads) {
    m.faces.push_back({q[0], q[1], q[2]});
    m.faces.push_back({q[0], q[2], q[3]});
  }
  return m;
}

Mesh cylinder(double radius, double half_height, int segments) {
  Mesh m;
  const int top = add_vertex(m, {0, 0, half_height});
  const int bottom = add_vertex(m, {0, 0, -half_height});
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * kPi * i / segments;
    add_vertex(m, {radius * std::cos(a), radius * std::sin(a), half_height});
    add_vertex(m, {radius * std::cos(a), radius * std::sin(a), -half_height});
  }
  for (int i = 0; i < segments; ++i) {
    const int t0 = 2 + 2 * i, b0 = t0 + 1;
    const int t1 = 2 + 2 * ((i + 1) % segments), b1 = t1 + 1;
    m.faces.push_back({top, t0, t1});
    m.faces.push_back({bottom, b1, b0});
    m.faces.push_back({t0, b0, b1});
    m.faces.push_back({t0, b1, t1});
  }
  return m;
}

Mesh cone(double radius, double height, int segments) {
  Mesh m;
  const int apex = add_vertex(m, {0, 0, height});
  const int base = add_vertex(m, {0, 0, 0});
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * kPi * i / segments;
    add_vertex(m, {radius * std::cos(a), radius * std::sin(a), 0.0});
  }
  for (int i = 0; i < segments; ++i) {
    const int r0 = 2 + i, r1 = 2 + (i + 1) % segments;
    m.faces.push_back({apex, r0, r1});
    m.faces.push_back({base, r1, r0});
  }
  return m;
}

Mesh torus(double major_radius, double minor_radius, int major_segments, int minor_segments) {
  Mesh m;
  for (int i = 0; i < major_segments; ++i) {
    const double a = 2.0 * kPi * i / major_segments;
    for (int j = 0; j < minor_segments; ++j) {
      const double b = 2.0 * kPi * j / minor_segments;
      const double r = major_radius + minor_radius * std::cos(b);
      add_vertex(m, {r * std::cos(a), r * std::sin(a), minor_radius * std::sin(b)});
    }
  }
  auto at = [&](int i, int j) {
    return (i % major_segments) * minor_segments + (j % minor_segments);
  };
  for (int i = 0; i < major_segments; ++i) {
    for (int j = 0; j < minor_segments; ++j) {
      m.faces.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
      m.faces.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
    }
  }
  return m;
}

const std::vector<std::string>& procedural_names() {
  static const std::vector<std::string> names = {"sphere", "box",       "cylinder", "cone",
                                                 "torus",  "composite", "lblock"};
  return names;
}

Mesh make_object(const std::string& name) {
  if (name == "sphere") return icosphere(3);
  if (name == "box") return box({1.0, 0.7, 0.5});
  if (name == "cylinder") return cylinder(0.6, 1.0, 32);
  if (name == "cone") return cone(1.0, 1.6, 32);
  if (name == "torus") return torus(1.0, 0.4, 32, 16);
  if (name == "composite") {
    // A slab with a ball resting on top.
    const Mesh base = box({1.0, 1.0, 0.35});
    const Mesh ball = transform(icosphere(2, 0.65), Mat3::Identity(), {0.2, -0.1, 0.9});
    return merge(base, ball);
  }
  if (name == "lblock") {
    const Mesh a = box({1.0, 0.35, 0.35});
    const Mesh b = transform(box({0.35, 0.35, 0.8}), Mat3::Identity(), {-0.65, 0.0, 0.8});
    return merge(a, b);
  }
  throw Error(Errc::ConfigError, "unknown procedural object '" + name + "'");
}

Mesh normalize(const Mesh& mesh, double half_extent) {
  const Aabb box = mesh.bounds();
  if (box.empty()) throw Error(Errc::DegenerateMesh, "cannot normalize an empty mesh");
  const double largest = 0.5 * box.size().maxCoeff();
  if (!(largest > 0.0)) throw Error(Errc::DegenerateMesh, "mesh has zero extent");
  const double s = half_extent / largest;
  Mesh out = mesh;
  const Vec3 c = box.center();
  for (Vec3& v : out.vertices) v = (v - c) * s;
  return out;
}

}  // namespace nbv::shapes
