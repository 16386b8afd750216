#pragma once

#include <string>
#include <vector>

#include "nbv/sensor.hpp"

namespace nbv::shapes {

/// Unit-radius icosphere; subdivision s has 10*4^s + 2 vertices and 20*4^s
/// faces. Vertices 0 and 1 are the poles (0, 0, +1) and (0, 0, -1).
Mesh icosphere(int subdivisions, double radius = 1.0);
Mesh box(const Vec3& half_extent);
Mesh cylinder(double radius, double half_height, int segments = 32);
Mesh cone(double radius, double height, int segments = 32);
Mesh torus(double major_radius, double minor_radius, int major_segments = 32,
           int minor_segments = 16);

/// Names accepted by make_object.
const std::vector<std::string>& procedural_names();

/// Procedural corpus object, unnormalized. Throws Errc::ConfigError for an
/// unknown name.
Mesh make_object(const std::string& name);

/// Centres the bounding box on the origin and scales uniformly so that the
/// largest half-extent equals `half_extent`.
Mesh normalize(const Mesh& mesh, double half_extent);

}  // namespace nbv::shapes
