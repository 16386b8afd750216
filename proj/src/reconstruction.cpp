#include "nbv/reconstruction.hpp"

#include <chrono>
#include <cmath>
#include <unordered_map>

#include "nbv/error.hpp"
#include "nbv/random.hpp"

namespace nbv {

double ReconstructionRun::mean_planning_seconds() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& it : iterations) {
    if (it.planning_seconds) {
      sum += *it.planning_seconds;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

std::size_t ReconstructionRun::planning_calls() const {
  std::size_t n = 0;
  for (const auto& it : iterations) n += it.planning_seconds.has_value();
  return n;
}

ReconstructionRun run(const Scene& scene, const PointCloud& reference, Planner& planner,
                      const RangeCamera& camera, const View& initial_view,
                      OccupancyGrid empty_grid, const RunOptions& options) {
  if (options.max_scans < 1) throw Error(Errc::ConfigError, "max_scans must be at least 1");
  if (reference.points.empty()) throw Error(Errc::EmptyReference, "reference cloud is empty");

  ReconstructionRun r{planner.tag(), {}, false, {}, std::move(empty_grid), {}};
  View view = initial_view;
  for (int scan = 0; scan < options.max_scans; ++scan) {
    const PointCloud cloud =
        render_scan(scene, view, camera, Rng::derive(options.noise_seed, scan));
    r.grid.integrate_scan(cloud, camera.max_range);

    IterationRecord rec;
    rec.view = view;
    for (const Vec3& p : cloud.points) {
      if (options.table_z && p.z() <= *options.table_z + options.table_margin) continue;
      r.cloud.points.push_back(p);
      ++rec.points_added;
    }
    rec.coverage = coverage(r.cloud, reference, options.coverage_distance);
    r.iterations.push_back(rec);

    if (scan + 1 == options.max_scans) break;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      view = planner.next_view(r.grid);
    } catch (const Error& e) {
      r.incomplete = true;
      r.error = std::string(errc_name(e.code())) + ": " + e.what();
      break;
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    r.iterations.back().planning_seconds = dt.count();
  }
  return r;
}

namespace {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

CellKey cell_of(const Vec3& p, double d) {
  return {static_cast<std::int64_t>(std::floor(p.x() / d)),
          static_cast<std::int64_t>(std::floor(p.y() / d)),
          static_cast<std::int64_t>(std::floor(p.z() / d))};
}

}  // namespace

double coverage(const PointCloud& accumulated, const PointCloud& reference, double d) {
  if (reference.points.empty()) throw Error(Errc::EmptyReference, "reference cloud is empty");
  if (!(d > 0.0)) throw Error(Errc::ConfigError, "coverage distance must be positive");
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> cells;
  cells.reserve(accumulated.points.size());
  for (std::size_t i = 0; i < accumulated.points.size(); ++i) {
    cells[cell_of(accumulated.points[i], d)].push_back(i);
  }
  const double d2 = d * d;
  std::size_t matched = 0;
  for (const Vec3& q : reference.points) {
    const CellKey c = cell_of(q, d);
    bool found = false;
    for (int dx = -1; dx <= 1 && !found; ++dx) {
      for (int dy = -1; dy <= 1 && !found; ++dy) {
        for (int dz = -1; dz <= 1 && !found; ++dz) {
          auto it = cells.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells.end()) continue;
          for (std::size_t i : it->second) {
            if ((accumulated.points[i] - q).squaredNorm() <= d2) {
              found = true;
              break;
            }
          }
        }
      }
    }
    matched += found;
  }
  return 100.0 * static_cast<double>(matched) / static_cast<double>(reference.points.size());
}

PointCloud reference_cloud_from_mesh(const Mesh& mesh, int n_points, std::uint64_t seed) {
  if (n_points < 1) throw Error(Errc::ConfigError, "reference needs at least one point");
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += mesh.triangle_area(f);
    cumulative[f] = total;
  }
  if (!(total > 0.0)) throw Error(Errc::DegenerateMesh, "mesh has no surface area to sample");

  PointCloud cloud;
  cloud.points.reserve(n_points);
  Rng rng(seed);
  for (int i = 0; i < n_points; ++i) {
    const double u = rng.uniform() * total;
    auto f = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                      cumulative.begin());
    f = std::min(f, mesh.faces.size() - 1);
    const auto& face = mesh.faces[f];
    const Vec3& a = mesh.vertices[face[0]];
    const Vec3& b = mesh.vertices[face[1]];
    const Vec3& c = mesh.vertices[face[2]];
    const double s = std::sqrt(rng.uniform());
    const double t = rng.uniform();
    cloud.points.push_back((1.0 - s) * a + s * (1.0 - t) * b + s * t * c);
  }
  return cloud;
}

View front_view(const ViewSphere& sphere) {
  if (sphere.views.empty()) throw Error(Errc::EmptyCandidateSet, "no candidate views");
  const Vec3 target = sphere.center + Vec3(0.0, -sphere.radius, 0.0);
  std::size_t best = 0;
  for (std::size_t i = 1; i < sphere.views.size(); ++i) {
    if ((sphere.views[i].position - target).squaredNorm() <
        (sphere.views[best].position - target).squaredNorm()) {
      best = i;
    }
  }
  return sphere.views[best];
}

nlohmann::json run_to_json(const ReconstructionRun& r) {
  using nlohmann::json;
  json its = json::array();
  for (std::size_t i = 0; i < r.iterations.size(); ++i) {
    const IterationRecord& it = r.iterations[i];
    const Vec3& p = it.view.position;
    json j{{"scan", i + 1},
           {"position", {p.x(), p.y(), p.z()}},
           {"yaw", it.view.yaw},
           {"pitch", it.view.pitch},
           {"roll", it.view.roll},
           {"points_added", it.points_added},
           {"coverage", it.coverage}};
    j["planning_seconds"] = it.planning_seconds ? json(*it.planning_seconds) : json(nullptr);
    its.push_back(std::move(j));
  }
  return json{{"planner", r.planner},
              {"incomplete", r.incomplete},
              {"error", r.error},
              {"iterations", std::move(its)},
              {"scans", r.iterations.size()},
              {"final_coverage", r.final_coverage()},
              {"planning_calls", r.planning_calls()},
              {"mean_planning_seconds", r.mean_planning_seconds()}};
}

void strip_timing(nlohmann::json& report) {
  if (report.is_object()) {
    report.erase("planning_seconds");
    report.erase("mean_planning_seconds");
    for (auto& [key, value] : report.items()) strip_timing(value);
  } else if (report.is_array()) {
    for (auto& value : report) strip_timing(value);
  }
}

}  // namespace nbv
