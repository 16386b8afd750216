#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nbv/geometry.hpp"
#include "nbv/nbvnet.hpp"
#include "nbv/sensor.hpp"
#include "nbv/voxel_grid.hpp"

namespace nbv {

struct ViewSphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  std::vector<View> views;
};

/// `count` views on a Fibonacci lattice over the whole sphere, each gazing at
/// `center`. Throws Errc::InvalidGeometry for radius <= 0 or count < 1.
ViewSphere generate_view_sphere(const Vec3& center, double radius, int count);

/// Same lattice restricted to the cap z >= min_z (world frame), spread evenly
/// in z over the cap. Used to keep candidates above a table.
ViewSphere generate_view_cap(const Vec3& center, double radius, int count, double min_z);

struct ViewScore {
  View view;
  std::size_t gain = 0;  // distinct Unknown first-hit voxels
  double overlap = 0.0;  // Occupied share of distinct first-hit voxels
};

/// Casts one ray per camera pixel and classifies the first non-Free voxel.
ViewScore score_view(const OccupancyGrid& grid, const View& view, const RangeCamera& camera);

/// Index of the best candidate: maximum gain among views with
/// overlap >= overlap_min, or over all views when none qualifies; lowest
/// index wins ties. Throws Errc::EmptyCandidateSet.
std::size_t exhaustive_nbv_index(const OccupancyGrid& grid, const ViewSphere& sphere,
                                 const RangeCamera& camera, double overlap_min);
View exhaustive_nbv(const OccupancyGrid& grid, const ViewSphere& sphere,
                    const RangeCamera& camera, double overlap_min);

/// Picks class_views[argmax of the net output]. Throws Errc::ArityMismatch
/// unless the output width equals class_views.size().
std::size_t classification_nbv_index(const OccupancyGrid& grid, const net::NbvNet& net,
                                     const std::vector<View>& class_views);
View classification_nbv(const OccupancyGrid& grid, const net::NbvNet& net,
                        const std::vector<View>& class_views);

/// Position k * net(grid) with the orientation that gazes at `center`.
/// Throws Errc::ArityMismatch unless the net has 3 outputs, and
/// Errc::DegeneratePosition when the position lands on `center`.
View regression_nbv(const OccupancyGrid& grid, const net::NbvNet& net, double k,
                    const Vec3& center);

/// Common face of the three strategies for the reconstruction loop.
class Planner {
 public:
  virtual ~Planner() = default;
  virtual std::string tag() const = 0;
  virtual View next_view(const OccupancyGrid& grid) = 0;
};

class InfoGainPlanner final : public Planner {
 public:
  InfoGainPlanner(ViewSphere sphere, RangeCamera camera, double overlap_min)
      : sphere_(std::move(sphere)), camera_(camera), overlap_min_(overlap_min) {}
  std::string tag() const override { return "infogain"; }
  View next_view(const OccupancyGrid& grid) override {
    return exhaustive_nbv(grid, sphere_, camera_, overlap_min_);
  }

 private:
  ViewSphere sphere_;
  RangeCamera camera_;
  double overlap_min_;
};

class ClassificationPlanner final : public Planner {
 public:
  ClassificationPlanner(net::NbvNet net, std::vector<View> views)
      : net_(std::move(net)), views_(std::move(views)) {}
  std::string tag() const override { return "classification"; }
  View next_view(const OccupancyGrid& grid) override {
    return classification_nbv(grid, net_, views_);
  }

 private:
  net::NbvNet net_;
  std::vector<View> views_;
};

class RegressionPlanner final : public Planner {
 public:
  RegressionPlanner(net::NbvNet net, double k, const Vec3& center)
      : net_(std::move(net)), k_(k), center_(center) {}
  std::string tag() const override { return "regression"; }
  View next_view(const OccupancyGrid& grid) override {
    return regression_nbv(grid, net_, k_, center_);
  }

 private:
  net::NbvNet net_;
  double k_;
  Vec3 center_;
};

}  // namespace nbv
