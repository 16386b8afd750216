#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "nbv/geometry.hpp"

namespace nbv {

using Index3 = Eigen::Vector3i;

enum class VoxelState : std::uint8_t { Free, Unknown, Occupied };

const char* to_string(VoxelState s);

enum class InputEncoding { Probability, Ternary };

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double sigmoid(double l) { return 1.0 / (1.0 + std::exp(-l)); }

/// Inverse sensor model and state thresholds, all held in log-odds.
struct SensorModel {
  double hit = logit(0.7);
  double miss = logit(0.4);
  double clamp_min = logit(0.12);
  double clamp_max = logit(0.97);
  double occupied_above = logit(0.55);
  double free_below = logit(0.45);
};

struct PointCloud {
  std::vector<Vec3> points;
  Vec3 origin = Vec3::Zero();
};

/// Dense log-odds occupancy grid. Voxel (i, j, k) spans
/// [origin + (i, j, k) * voxel_size, origin + (i+1, j+1, k+1) * voxel_size),
/// stored x-fastest.
class OccupancyGrid {
 public:
  OccupancyGrid(const Index3& dims, double voxel_size, const Vec3& origin,
                const SensorModel& model = {});

  const Index3& dims() const { return dims_; }
  double voxel_size() const { return voxel_size_; }
  const Vec3& origin() const { return origin_; }
  Vec3 extent() const { return dims_.cast<double>() * voxel_size_; }
  Vec3 center() const { return origin_ + 0.5 * extent(); }
  const SensorModel& model() const { return model_; }
  std::size_t size() const { return log_odds_.size(); }

  bool contains(const Index3& idx) const {
    return (idx.array() >= 0).all() && (idx.array() < dims_.array()).all();
  }
  std::size_t linear(const Index3& idx) const {
    return static_cast<std::size_t>(idx.x()) +
           static_cast<std::size_t>(dims_.x()) *
               (static_cast<std::size_t>(idx.y()) +
                static_cast<std::size_t>(dims_.y()) * static_cast<std::size_t>(idx.z()));
  }
  Index3 unlinear(std::size_t i) const;

  std::optional<Index3> voxel_at(const Vec3& p) const;
  Vec3 voxel_center(const Index3& idx) const;

  double log_odds(const Index3& idx) const;
  double probability(const Index3& idx) const { return sigmoid(log_odds(idx)); }
  VoxelState state(const Index3& idx) const;
  VoxelState state_linear(std::size_t i) const { return classify(log_odds_[i]); }
  VoxelState classify(double l) const {
    if (l > model_.occupied_above) return VoxelState::Occupied;
    if (l < model_.free_below) return VoxelState::Free;
    return VoxelState::Unknown;
  }

  // Stores `value` clamped to the model's log-odds bounds.
  void set_log_odds(const Index3& idx, double value);
  void add_log_odds(const Index3& idx, double delta);

  std::span<const double> raw() const { return log_odds_; }

  /// Bayes-filter update with one registered scan. Per scan every voxel gets
  /// at most one update: a hit if any endpoint falls in it, otherwise a miss if
  /// any ray crosses it. Returns beyond `max_range` carve free space only.
  void integrate_scan(const PointCloud& cloud,
                      double max_range = std::numeric_limits<double>::infinity());

  /// Intersects the ray parameter interval [t0, t1] with the grid box.
  bool clip(const Vec3& origin, const Vec3& dir, double& t0, double& t1) const;

  /// Visits, in traversal order, every voxel the ray origin + t * dir crosses
  /// for t in [t_begin, t_end]. `visit(index, t_enter)` returns false to stop.
  template <typename Visit>
  void walk(const Vec3& origin, const Vec3& dir, double t_begin, double t_end,
            Visit&& visit) const;

 private:
  Index3 dims_;
  double voxel_size_;
  Vec3 origin_;
  SensorModel model_;
  std::vector<double> log_odds_;
  std::vector<std::uint8_t> scratch_;
};

/// Cubic grid of dims centred on `center`; voxel_size = span / dims.x().
/// Throws Errc::InvalidDims for non-positive span or dims, or unequal dims.
OccupancyGrid new_grid(const Vec3& center, double span, const Index3& dims,
                       const SensorModel& model = {});

VoxelState voxel_state(const OccupancyGrid& grid, const Index3& idx);

struct RayHit {
  Index3 index;
  VoxelState state;
  double t_enter;
};

/// First voxel along the ray that is not Free, or nullopt when the ray leaves
/// the grid (or passes max_range) through free space only.
std::optional<RayHit> raycast(const OccupancyGrid& grid, const Vec3& origin,
                              const Vec3& direction, double max_range);

inline constexpr int kInputSide = 32;
inline constexpr std::size_t kInputSize = kInputSide * kInputSide * kInputSide;

/// Network input: one value per voxel in storage order (z-major, x-fastest).
/// Throws Errc::WrongDims unless the grid is 32^3.
std::vector<float> to_input_tensor(const OccupancyGrid& grid,
                                   InputEncoding encoding = InputEncoding::Probability);

/// Rebuilds log-odds from a probability-encoded tensor (inverse of
/// to_input_tensor up to float rounding).
void load_probabilities(OccupancyGrid& grid, std::span<const float> probabilities);

/// Text export: header `dims m n o voxel_size s origin ox oy oz`, then one
/// `x y z p` line per non-Unknown voxel centre.
void write_grid_export(const OccupancyGrid& grid, std::ostream& out);

// ---------------------------------------------------------------------------

template <typename Visit>
void OccupancyGrid::walk(const Vec3& origin, const Vec3& dir, double t_begin,
                         double t_end, Visit&& visit) const {
  double t0 = t_begin, t1 = t_end;
  if (!clip(origin, dir, t0, t1)) return;

  const Vec3 start = origin + t0 * dir;
  const Vec3 rel = (start - origin_) / voxel_size_;
  Index3 cell;
  int step[3];
  double t_max[3];
  double t_delta[3];
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    int c = static_cast<int>(std::floor(rel[a]));
    c = std::clamp(c, 0, dims_[a] - 1);
    cell[a] = c;
    if (dir[a] > 0.0) {
      step[a] = 1;
      t_delta[a] = voxel_size_ / dir[a];
      t_max[a] = t0 + ((c + 1) - rel[a]) * t_delta[a];
    } else if (dir[a] < 0.0) {
      step[a] = -1;
      t_delta[a] = -voxel_size_ / dir[a];
      t_max[a] = t0 + (rel[a] - c) * t_delta[a];
    } else {
      step[a] = 0;
      t_delta[a] = inf;
      t_max[a] = inf;
    }
  }

  double t_enter = t0;
  while (true) {
    if (!visit(static_cast<const Index3&>(cell), t_enter)) return;
    int a = 0;
    if (t_max[1] < t_max[a]) a = 1;
    if (t_max[2] < t_max[a]) a = 2;
    if (t_max[a] >= t1) return;
    t_enter = t_max[a];
    cell[a] += step[a];
    if (cell[a] < 0 || cell[a] >= dims_[a]) return;
    t_max[a] += t_delta[a];
  }
}

}  // namespace nbv
