#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "nbv/planners.hpp"
#include "nbv/sensor.hpp"
#include "nbv/voxel_grid.hpp"

namespace nbv {

struct IterationRecord {
  View view;
  std::size_t points_added = 0;
  double coverage = 0.0;  // percent, cumulative
  // Wall time of the planning call made after this scan; empty for the last.
  std::optional<double> planning_seconds;
};

struct ReconstructionRun {
  std::string planner;
  std::vector<IterationRecord> iterations;
  bool incomplete = false;
  std::string error;  // "Tag: message" when incomplete
  OccupancyGrid grid;
  PointCloud cloud;

  double final_coverage() const { return iterations.empty() ? 0.0 : iterations.back().coverage; }
  /// Mean over recorded planning calls; 0 when there were none.
  double mean_planning_seconds() const;
  std::size_t planning_calls() const;
};

struct RunOptions {
  int max_scans = 10;
  double coverage_distance = 0.005;
  // Accumulated points with z <= table_z + table_margin are not scored.
  std::optional<double> table_z;
  double table_margin = 0.01;
  std::uint64_t noise_seed = 0;
};

/// Position, sense, update, plan until max_scans scans. A planner error after
/// the first scan ends the run early with `incomplete` set.
ReconstructionRun run(const Scene& scene, const PointCloud& reference, Planner& planner,
                      const RangeCamera& camera, const View& initial_view,
                      OccupancyGrid empty_grid, const RunOptions& options);

/// Percentage of reference points with an accumulated point within distance
/// d, found through a hash of cells of size d. Throws Errc::EmptyReference.
double coverage(const PointCloud& accumulated, const PointCloud& reference, double d);

/// Area-weighted uniform surface samples. Throws Errc::DegenerateMesh.
PointCloud reference_cloud_from_mesh(const Mesh& mesh, int n_points, std::uint64_t seed);

/// The sphere view closest to center + (0, -radius, 0).
View front_view(const ViewSphere& sphere);

/// Report schema: planner, incomplete, error, iterations[], totals.
nlohmann::json run_to_json(const ReconstructionRun& run);
/// Removes wall-clock fields so reports can be compared byte for byte.
void strip_timing(nlohmann::json& report);

}  // namespace nbv
