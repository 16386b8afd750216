#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nbv/nbvnet.hpp"
#include "nbv/planners.hpp"
#include "nbv/sensor.hpp"

namespace nbv {

struct Sample {
  std::vector<float> grid;        // kInputSize probabilities
  std::array<float, 3> label{};   // NBV position / sphere radius
  std::uint32_t object_id = 0;
  std::uint32_t scan_index = 0;

  bool operator==(const Sample&) const = default;
};

enum class LabelMode {
  Visibility,  // predicted Unknown-voxel visibility (score_view gain)
  Simulated,   // render each candidate and count voxels that become Occupied
};

LabelMode parse_label_mode(const std::string& s);
std::string to_string(LabelMode m);

/// Everything needed to regenerate or re-verify the samples.
struct DatasetMeta {
  Vec3 sphere_center = Vec3::Zero();
  double sphere_radius = 0.4;
  int candidates = 20;
  std::optional<double> cap_min_z;  // candidates restricted to z >= this
  double overlap_min = 0.15;
  std::uint64_t seed = 0;
  Vec3 grid_center = Vec3::Zero();
  double grid_span = 0.32;
  int grid_dims = kInputSide;
  LabelMode label_mode = LabelMode::Visibility;
  RangeCamera camera;
  std::vector<std::string> objects;  // indexed by Sample::object_id

  ViewSphere sphere() const;
  OccupancyGrid empty_grid() const;

  std::string to_json() const;
  static DatasetMeta from_json(const std::string& text);
  bool operator==(const DatasetMeta& o) const { return to_json() == o.to_json(); }
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Sample> samples;

  bool operator==(const Dataset&) const = default;
  /// Views over the samples for training, labels as targets.
  std::vector<net::Example> examples() const;
};

struct GenerationConfig {
  int runs = 10;
  int scans_per_run = 6;
};

/// Runs `config.runs` seeded reconstructions of `scene` and emits one sample
/// per planning step: the grid snapshot after integrating a scan, labelled
/// with the best candidate under meta.label_mode.
std::vector<Sample> generate_for_object(const Scene& scene, const DatasetMeta& meta,
                                        std::uint32_t object_id,
                                        const GenerationConfig& config);

/// Candidate index the label mode picks for `grid`.
std::size_t label_candidate(const OccupancyGrid& grid, const Scene& scene,
                            const ViewSphere& sphere, const DatasetMeta& meta);

/// Seeded shuffle, then the first ceil(f * n) samples train. Throws
/// Errc::EmptyDataset and Errc::ConfigError for f outside (0, 1).
std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  std::uint64_t seed);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

struct VerifyReport {
  std::size_t checked = 0;
  std::size_t valid = 0;
  std::vector<std::size_t> failures;  // sample indices
};

/// Re-scores every visibility-labelled sample from its stored grid and checks
/// that the label is a candidate and the argmax under meta.overlap_min.
VerifyReport verify_dataset(const Dataset& dataset);

}  // namespace nbv
