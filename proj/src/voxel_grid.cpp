#include "nbv/voxel_grid.hpp"

#include <cstdio>
#include <ostream>
#include <string>

#include "nbv/error.hpp"

namespace nbv {

namespace {

constexpr std::uint8_t kUntouched = 0;
constexpr std::uint8_t kMissMark = 1;
constexpr std::uint8_t kHitMark = 2;

}  // namespace

const char* to_string(VoxelState s) {
  switch (s) {
    case VoxelState::Free: return "free";
    case VoxelState::Unknown: return "unknown";
    case VoxelState::Occupied: return "occupied";
  }
  return "?";
}

OccupancyGrid::OccupancyGrid(const Index3& dims, double voxel_size, const Vec3& origin,
                             const SensorModel& model)
    : dims_(dims), voxel_size_(voxel_size), origin_(origin), model_(model) {
  if ((dims.array() <= 0).any()) throw Error(Errc::InvalidDims, "grid dims must be positive");
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw Error(Errc::InvalidDims, "voxel size must be positive");
  }
  const std::size_t n = static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
  log_odds_.assign(n, 0.0);
  scratch_.assign(n, kUntouched);
}

OccupancyGrid new_grid(const Vec3& center, double span, const Index3& dims,
                       const SensorModel& model) {
  if (!(span > 0.0) || !std::isfinite(span)) {
    throw Error(Errc::InvalidDims, "grid span must be positive");
  }
  if ((dims.array() <= 0).any()) throw Error(Errc::InvalidDims, "grid dims must be positive");
  if (dims.x() != dims.y() || dims.y() != dims.z()) {
    throw Error(Errc::InvalidDims, "a cubic span needs equal dims for cubic voxels");
  }
  const double voxel = span / dims.x();
  const Vec3 origin = center - Vec3::Constant(0.5 * span);
  return OccupancyGrid(dims, voxel, origin, model);
}

Index3 OccupancyGrid::unlinear(std::size_t i) const {
  const int x = static_cast<int>(i % dims_.x());
  i /= dims_.x();
  const int y = static_cast<int>(i % dims_.y());
  const int z = static_cast<int>(i / dims_.y());
  return {x, y, z};
}

std::optional<Index3> OccupancyGrid::voxel_at(const Vec3& p) const {
  const Vec3 rel = (p - origin_) / voxel_size_;
  Index3 idx;
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor(rel[a]);
    if (!(f >= 0.0 && f < dims_[a])) return std::nullopt;
    idx[a] = static_cast<int>(f);
  }
  return idx;
}

Vec3 OccupancyGrid::voxel_center(const Index3& idx) const {
  return origin_ + (idx.cast<double>().array() + 0.5).matrix() * voxel_size_;
}

double OccupancyGrid::log_odds(const Index3& idx) const {
  if (!contains(idx)) throw Error(Errc::IndexOutOfBounds, "voxel index outside the grid");
  return log_odds_[linear(idx)];
}

VoxelState OccupancyGrid::state(const Index3& idx) const { return classify(log_odds(idx)); }

VoxelState voxel_state(const OccupancyGrid& grid, const Index3& idx) { return grid.state(idx); }

void OccupancyGrid::set_log_odds(const Index3& idx, double value) {
  if (!contains(idx)) throw Error(Errc::IndexOutOfBounds, "voxel index outside the grid");
  log_odds_[linear(idx)] = std::clamp(value, model_.clamp_min, model_.clamp_max);
}

void OccupancyGrid::add_log_odds(const Index3& idx, double delta) {
  if (!contains(idx)) throw Error(Errc::IndexOutOfBounds, "voxel index outside the grid");
  double& l = log_odds_[linear(idx)];
  l = std::clamp(l + delta, model_.clamp_min, model_.clamp_max);
}

bool OccupancyGrid::clip(const Vec3& origin, const Vec3& dir, double& t0, double& t1) const {
  const Vec3 hi = origin_ + extent();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < origin_[a] || origin[a] >= hi[a]) return false;
      continue;
    }
    double ta = (origin_[a] - origin[a]) / dir[a];
    double tb = (hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return t0 < t1;
}

void OccupancyGrid::integrate_scan(const PointCloud& cloud, double max_range) {
  if (cloud.points.empty()) return;
  std::vector<std::size_t> touched;
  touched.reserve(cloud.points.size() * 4);

  // Hits first so that a voxel both crossed and hit in this scan counts as hit.
  for (const Vec3& p : cloud.points) {
    if ((p - cloud.origin).norm() > max_range) continue;
    if (auto idx = voxel_at(p)) {
      const std::size_t i = linear(*idx);
      if (scratch_[i] != kHitMark) {
        if (scratch_[i] == kUntouched) touched.push_back(i);
        scratch_[i] = kHitMark;
      }
    }
  }
  for (const Vec3& p : cloud.points) {
    const Vec3 d = p - cloud.origin;
    const double range = d.norm();
    if (!(range > 0.0)) continue;
    const Vec3 dir = d / range;
    const double t_end = std::min(range, max_range);
    std::optional<std::size_t> end_voxel;
    if (range <= max_range) {
      if (auto idx = voxel_at(p)) end_voxel = linear(*idx);
    }
    walk(cloud.origin, dir, 0.0, t_end, [&](const Index3& idx, double) {
      const std::size_t i = linear(idx);
      if (end_voxel && *end_voxel == i) return true;
      if (scratch_[i] == kUntouched) {
        scratch_[i] = kMissMark;
        touched.push_back(i);
      }
      return true;
    });
  }

  for (std::size_t i : touched) {
    const double delta = scratch_[i] == kHitMark ? model_.hit : model_.miss;
    log_odds_[i] = std::clamp(log_odds_[i] + delta, model_.clamp_min, model_.clamp_max);
    scratch_[i] = kUntouched;
  }
}

std::optional<RayHit> raycast(const OccupancyGrid& grid, const Vec3& origin,
                              const Vec3& direction, double max_range) {
  std::optional<RayHit> hit;
  const auto raw = grid.raw();
  grid.walk(origin, direction, 0.0, max_range, [&](const Index3& idx, double t) {
    const VoxelState s = grid.classify(raw[grid.linear(idx)]);
    if (s == VoxelState::Free) return true;
    hit = RayHit{idx, s, t};
    return false;
  });
  return hit;
}

std::vector<float> to_input_tensor(const OccupancyGrid& grid, InputEncoding encoding) {
  if (grid.dims() != Index3::Constant(kInputSide)) {
    throw Error(Errc::WrongDims, "network input requires a 32x32x32 grid");
  }
  std::vector<float> out(grid.size());
  const auto raw = grid.raw();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (encoding == InputEncoding::Probability) {
      out[i] = static_cast<float>(sigmoid(raw[i]));
    } else {
      switch (grid.classify(raw[i])) {
        case VoxelState::Free: out[i] = 0.0f; break;
        case VoxelState::Unknown: out[i] = 0.5f; break;
        case VoxelState::Occupied: out[i] = 1.0f; break;
      }
    }
  }
  return out;
}

void load_probabilities(OccupancyGrid& grid, std::span<const float> probabilities) {
  if (probabilities.size() != grid.size()) {
    throw Error(Errc::WrongDims, "probability tensor size does not match the grid");
  }
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = probabilities[i];
    grid.set_log_odds(grid.unlinear(i), logit(p));
  }
}

void write_grid_export(const OccupancyGrid& grid, std::ostream& out) {
  char line[192];
  const Index3& d = grid.dims();
  const Vec3& o = grid.origin();
  std::snprintf(line, sizeof line, "dims %d %d %d voxel_size %.9g origin %.9g %.9g %.9g\n",
                d.x(), d.y(), d.z(), grid.voxel_size(), o.x(), o.y(), o.z());
  out << line;
  const auto raw = grid.raw();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (grid.classify(raw[i]) == VoxelState::Unknown) continue;
    const Vec3 c = grid.voxel_center(grid.unlinear(i));
    std::snprintf(line, sizeof line, "%.6f %.6f %.6f %.6f\n", c.x(), c.y(), c.z(),
                  sigmoid(raw[i]));
    out << line;
  }
}

}  // namespace nbv
