// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--allow-fail 8] [--workdir DIR]
//
// The exit status is 0 when every failing criterion is listed in
// --allow-fail, so a known shortfall stays visible without breaking ctest.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <map>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "gradcheck.hpp"
#include "nbv/dataset.hpp"
#include "nbv/error.hpp"
#include "nbv/geometry.hpp"
#include "nbv/nbvnet.hpp"
#include "nbv/planners.hpp"
#include "nbv/reconstruction.hpp"
#include "nbv/shapes.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace nbv;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char b[64];
  std::snprintf(b, sizeof b, f, x);
  return b;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Mirrors the CLI scene: object normalized to half-extent 0.12 and resting on
// the table plane, candidates on the cap above the table.
constexpr double kHalfExtent = 0.12;
constexpr double kTableZ = -kHalfExtent;

Mesh on_table(const std::string& name) {
  const Mesh m = shapes::normalize(shapes::make_object(name), kHalfExtent);
  return transform(m, Mat3::Identity(), Vec3(0, 0, kTableZ - m.bounds().lo.z()));
}

ViewSphere table_cap(int count) {
  return generate_view_cap(Vec3::Zero(), 0.4, count, kTableZ + 0.02);
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::fprintf(stderr, "nbv %s failed (%d): %s", args[0].c_str(), code, e.str().c_str());
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

// ---------------------------------------------------------------------------

Outcome geometry_round_trip() {
  Rng rng(1);
  double worst = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    Vec3 p, c;
    do {
      p = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
      c = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    } while ((p - c).norm() < 1e-6);
    const Orientation o = orientation_from_position(p, c);
    const Vec3 d = rotation_from_tait_bryan(o.yaw, o.pitch, 0.0) * Vec3::UnitX();
    worst = std::max(worst, (d - (c - p).normalized()).norm());
  }
  return {worst <= 1e-9, std::to_string(n) + " pairs, max error " + fmt("%.2e", worst)};
}

OccupancyGrid random_grid(Rng& rng) {
  const int side = 8 + static_cast<int>(rng.below(17));
  OccupancyGrid g = new_grid(Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.0),
                             rng.uniform(0.2, 0.5), Index3::Constant(side));
  const double p_free = rng.uniform(0.3, 0.9), p_occ = rng.uniform(0.0, 0.1);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double u = rng.uniform();
    const Index3 c = g.unlinear(i);
    if (u < p_occ) {
      g.set_log_odds(c, g.model().clamp_max);
    } else if (u < p_occ + p_free) {
      g.set_log_odds(c, g.model().clamp_min);
    }
  }
  return g;
}

Outcome occupancy_oracle() {
  Rng rng(2);
  int agree = 0, total = 0, hits = 0;
  for (int gi = 0; gi < 20; ++gi) {
    const OccupancyGrid g = random_grid(rng);
    for (int r = 0; r < 50; ++r) {
      // Origins inside and outside the box; directions uniform on the sphere.
      const Vec3 o = g.center() + g.extent().cwiseProduct(Vec3(rng.uniform(-1, 1),
                                                               rng.uniform(-1, 1),
                                                               rng.uniform(-1, 1)));
      const Vec3 d = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
      const double max_range = rng.uniform() < 0.2 ? rng.uniform(0.05, 0.3) : 10.0;
      const auto a = raycast(g, o, d, max_range);
      const auto b = oracle::first_non_free(g, o, d, max_range);
      ++total;
      hits += a.has_value();
      if (a.has_value() == b.has_value() &&
          (!a || (a->index == b->index && a->state == b->state))) {
        ++agree;
      }
    }
  }
  return {agree == total, std::to_string(agree) + "/" + std::to_string(total) +
                              " rays agree (" + std::to_string(hits) + " with a hit)"};
}

Outcome gradient_suite() {
  using namespace net;
  struct Case {
    std::string name;
    Shape in;
    std::vector<LayerSpec> layers;
    Mode mode = Mode::Eval;
  };
  const std::vector<Case> cases = {
      {"conv", {2, 5, 5, 5}, {Conv3d{3, 3}, Flatten{}}},
      {"conv-stride-pad", {1, 6, 6, 6}, {Conv3d{2, 3, 1, 1}, Conv3d{2, 3, 2, 1}, Flatten{}}},
      {"maxpool", {1, 6, 6, 6}, {Conv3d{2, 3, 1, 1}, MaxPool3d{2}, Flatten{}, FullyConnected{2}}},
      {"fc", {7}, {FullyConnected{4}}},
      {"relu", {6}, {FullyConnected{5}, ReLU{}, FullyConnected{3}}},
      {"tanh", {6}, {FullyConnected{5}, Tanh{}, FullyConnected{3}}},
      {"flatten", {1, 3, 3, 3}, {Conv3d{2, 2}, Flatten{}, FullyConnected{3}}},
      {"dropout", {8}, {FullyConnected{6}, Dropout{0.5}, FullyConnected{3}}, Mode::Train},
  };
  std::size_t checked = 0, failed = 0, kinks = 0;
  double worst = 0.0;
  std::string worst_case;
  auto record = [&](const std::string& name, const gradcheck::Result& r) {
    checked += r.checked;
    failed += r.failed;
    kinks += r.kinks;
    if (r.worst > worst) {
      worst = r.worst;
      worst_case = name + " " + r.worst_where;
    }
  };
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const Case& c : cases) {
      NbvNet n(c.name, c.in, c.layers, seed);
      n.set_mode(c.mode);
      record(c.name, gradcheck::check(n, gradcheck::random_input(c.in, 2, 50 + seed), seed));
    }
    NbvNet a = build_variant("3-3", 3, DropoutStart::None, seed, {8, 0.25});
    record("3-3", gradcheck::check(a, gradcheck::random_input(a.input_shape(), 2, seed), seed,
                                   1e-4, 1e-3, 300));
    NbvNet b = build_variant("4-5", 3, DropoutStart::None, seed, {16, 0.125});
    record("4-5", gradcheck::check(b, gradcheck::random_input(b.input_shape(), 2, seed), seed,
                                   1e-4, 1e-3, 300));
  }
  std::string detail = std::to_string(checked - failed) + "/" + std::to_string(checked) +
                       " gradients within 1e-3 (" + std::to_string(kinks) +
                       " by one-sided difference at a kink), worst " + fmt("%.2e", worst);
  if (failed) detail += " (" + worst_case + ")";
  return {failed == 0, detail};
}

Outcome shape_claim() {
  const net::NbvNet n = net::build_variant("4-5", 3, net::DropoutStart::None, 0);
  return {n.flattened_width() == 4096,
          "4-5 flattens to " + std::to_string(n.flattened_width()) + " features"};
}

Outcome exhaustive_oracle() {
  Rng rng(5);
  RangeCamera cam;
  int agree = 0;
  for (int gi = 0; gi < 50; ++gi) {
    OccupancyGrid g = new_grid(Vec3::Zero(), 0.32, Index3::Constant(16));
    // Unknown core with a carved free shell and scattered surface voxels.
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Index3 c = g.unlinear(i);
      const double r = (g.voxel_center(c) - g.center()).norm();
      const double u = rng.uniform();
      if (r > rng.uniform(0.08, 0.16)) {
        g.set_log_odds(c, u < 0.05 ? g.model().clamp_max : g.model().clamp_min);
      } else if (u < 0.3) {
        g.set_log_odds(c, g.model().clamp_max);
      }
    }
    const ViewSphere s = generate_view_sphere(Vec3(rng.uniform(-0.02, 0.02), 0, 0), 0.4, 20);
    std::vector<oracle::Score> scores;
    for (const View& v : s.views) scores.push_back(oracle::score(g, v, cam));
    const std::size_t expected = oracle::best_view(scores, 0.15);
    const std::size_t got = exhaustive_nbv_index(g, s, cam, 0.15);
    const ViewScore sc = score_view(g, s.views[got], cam);
    if (got == expected && sc.gain == scores[expected].gain &&
        sc.overlap == scores[expected].overlap) {
      ++agree;
    }
  }
  return {agree == 50, std::to_string(agree) + "/50 grids pick the oracle view"};
}

struct TrainedPipeline {
  fs::path dir;
  bool ok = false;
};

// gen-dataset + train for criteria 6 and 7.
TrainedPipeline& desk_pipeline(const fs::path& work) {
  static TrainedPipeline p;
  if (!p.dir.empty()) return p;
  p.dir = work / "desk";
  fs::remove_all(p.dir);
  const std::vector<std::string> common = {
      "--seed", "1", "--set", "output_dir=" + p.dir.string(), "--set", "net.variant=3-3"};
  auto with = [&](std::vector<std::string> a, std::vector<std::string> extra) {
    a.insert(a.end(), common.begin(), common.end());
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  p.ok = cli(with({"gen-dataset"}, {"--set", "dataset.runs=25", "--set", "dataset.scans=9"})) == 0 &&
         cli(with({"train"}, {"--set", "train.epochs=50", "--set", "train.lr=1e-4", "--set",
                              "train.batch=16"})) == 0;
  return p;
}

Outcome desk_training(const fs::path& work) {
  const TrainedPipeline& p = desk_pipeline(work);
  if (!p.ok) return {false, "pipeline failed"};
  const Dataset d = read_dataset(p.dir / "dataset.nbvd");
  std::set<std::uint32_t> objects;
  for (const Sample& s : d.samples) objects.insert(s.object_id);
  std::ifstream log(p.dir / "train_log.csv");
  std::string line;
  std::getline(log, line);
  std::vector<std::array<double, 3>> rows;
  while (std::getline(log, line)) {
    std::array<double, 3> r{};
    std::sscanf(line.c_str(), "%*d,%lf,%lf,%lf", &r[0], &r[1], &r[2]);
    rows.push_back(r);
  }
  if (rows.size() != 50) return {false, "expected 50 log rows, got " + std::to_string(rows.size())};
  const double drop = 1.0 - rows.back()[1] / rows.front()[1];
  const double mae = rows.back()[2];
  const bool pass = d.samples.size() >= 300 && objects.size() >= 4 && drop >= 0.40 && mae <= 0.35;
  return {pass, std::to_string(d.samples.size()) + " samples over " +
                    std::to_string(objects.size()) + " objects; val MSE " +
                    fmt("%.4f", rows.front()[1]) + " -> " + fmt("%.4f", rows.back()[1]) + " (" +
                    fmt("%.1f", 100 * drop) + "% drop), val MAE " + fmt("%.3f", mae)};
}

Outcome reconstruction_coverage(const fs::path& work) {
  const TrainedPipeline& p = desk_pipeline(work);
  if (!p.ok) return {false, "pipeline failed"};
  // The CLI default derives k from the FOV so the object fits the frame.
  const double k = compute_scale_factor(0.5 * RangeCamera{}.fov_h, 2 * kHalfExtent, 0.4);
  const std::vector<std::string> common = {"--seed", "1", "--set", "output_dir=" + p.dir.string(),
                                           "--set", "reconstruct.object=sphere"};
  std::vector<std::string> ig = {"reconstruct", "--planner", "infogain"};
  std::vector<std::string> rg = {"reconstruct", "--planner", "regression"};
  ig.insert(ig.end(), common.begin(), common.end());
  rg.insert(rg.end(), common.begin(), common.end());
  if (cli(ig) != 0 || cli(rg) != 0) return {false, "reconstruct failed"};
  const auto a = read_json(p.dir / "report_sphere_infogain.json")["runs"][0];
  const auto b = read_json(p.dir / "report_sphere_regression.json")["runs"][0];
  const double cov_ig = a["final_coverage"], cov_rg = b["final_coverage"];
  const double first = b["iterations"][0]["coverage"];
  const bool pass = a["scans"] == 10 && b["scans"] == 10 && cov_ig >= 90.0 && cov_rg >= 60.0 &&
                    cov_rg > first;
  return {pass, "info-gain " + fmt("%.2f", cov_ig) + "%, regression " + fmt("%.2f", cov_rg) +
                    "% (k " + fmt("%.3f", k) + ", single scan " + fmt("%.2f", first) + "%)"};
}

// Runs the info-gain loop on the sphere and, at every planning step, also
// times the two network planners on the same partial model.
class TimingPlanner final : public Planner {
 public:
  TimingPlanner(InfoGainPlanner& ig, ClassificationPlanner& cl, RegressionPlanner& rg)
      : ig_(ig), cl_(cl), rg_(rg) {}
  std::string tag() const override { return "timing"; }
  View next_view(const OccupancyGrid& grid) override {
    auto time = [&](Planner& p, double& total) {
      const auto t0 = std::chrono::steady_clock::now();
      const View v = p.next_view(grid);
      total += seconds_since(t0);
      return v;
    };
    time(cl_, t_cl);
    try {
      time(rg_, t_rg);
    } catch (const Error&) {
      // An untrained net may aim at the centre; the time still counts.
    }
    ++calls;
    return time(ig_, t_ig);
  }
  double t_ig = 0, t_cl = 0, t_rg = 0;
  int calls = 0;

 private:
  InfoGainPlanner& ig_;
  ClassificationPlanner& cl_;
  RegressionPlanner& rg_;
};

Outcome planner_timing() {
  const Mesh mesh = on_table("sphere");
  const Scene scene({mesh}, kTableZ);
  const RangeCamera cam;  // 64 x 64
  const ViewSphere sphere = table_cap(20);
  InfoGainPlanner ig(sphere, cam, 0.15);
  ClassificationPlanner cl(net::build_variant("3-5", 14, net::DropoutStart::None, 1),
                           table_cap(14).views);
  RegressionPlanner rg(net::build_variant("4-5", 3, net::DropoutStart::None, 2), 0.4,
                       sphere.center);
  TimingPlanner timing(ig, cl, rg);
  RunOptions opt;
  opt.table_z = kTableZ;
  opt.table_margin = 0.01;
  const PointCloud ref = reference_cloud_from_mesh(mesh, 2000, 1);
  run(scene, ref, timing, cam, front_view(sphere), new_grid(Vec3::Zero(), 0.32, Index3::Constant(32)),
      opt);
  const double c = timing.t_cl / timing.calls, r = timing.t_rg / timing.calls,
               i = timing.t_ig / timing.calls;
  const bool pass = c < r && r < i && i >= 10 * r;
  return {pass, "mean per call over " + std::to_string(timing.calls) + " steps: classification " +
                    fmt("%.4f", c) + " s, regression " + fmt("%.4f", r) + " s, info-gain " +
                    fmt("%.4f", i) + " s (ratio " + fmt("%.2f", i / r) + ", need >= 10)"};
}

Outcome coverage_oracle() {
  Rng rng(9);
  int agree = 0;
  for (int t = 0; t < 20; ++t) {
    // Points scattered around shared centres so coverage is partial.
    auto cloud = [&](std::size_t n) {
      PointCloud c;
      for (std::size_t i = 0; i < n; ++i) {
        const Vec3 centre(0.05 * double(rng.below(4)), 0.05 * double(rng.below(4)), 0.0);
        c.points.push_back(centre + 0.02 * Vec3(rng.normal(), rng.normal(), rng.normal()));
      }
      return c;
    };
    const PointCloud a = cloud(500 + rng.below(4501)), b = cloud(500 + rng.below(4501));
    const double d = rng.uniform(0.001, 0.01);
    agree += coverage(a, b, d) == oracle::brute_coverage(a.points, b.points, d);
  }
  return {agree == 20, std::to_string(agree) + "/20 cloud pairs match brute force exactly"};
}

Outcome determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  const std::vector<std::string> common = {
      "--seed",  "7",
      "--set",   "output_dir=" + dir.string(),
      "--set",   "objects=[\"box\",\"cone\"]",
      "--set",   "camera.res_u=32",
      "--set",   "camera.res_v=32",
      "--set",   "dataset.runs=3",
      "--set",   "dataset.scans=3",
      "--set",   "net.variant=3-3",
      "--set",   "net.dropout_start=fc",
      "--set",   "train.epochs=2",
      "--set",   "train.batch=4",
      "--set",   "reconstruct.scans=4"};
  const std::vector<std::string> files = {"dataset.nbvd", "weights.nbvw", "train_log.csv"};
  std::vector<std::map<std::string, std::string>> runs;
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(dir);
    for (const char* cmd : {"gen-dataset", "train", "reconstruct"}) {
      std::vector<std::string> a{cmd};
      a.insert(a.end(), common.begin(), common.end());
      if (std::string(cmd) == "reconstruct") {
        a.insert(a.end(), {"--planner", "infogain"});
        if (cli(a) != 0) return {false, "reconstruct failed"};
        a.back() = "regression";
      }
      if (cli(a) != 0) return {false, std::string(cmd) + " failed"};
    }
    std::map<std::string, std::string> got;
    for (const auto& f : files) got[f] = slurp(dir / f);
    for (const char* planner : {"infogain", "regression"}) {
      const std::string name = std::string("report_sphere_") + planner + ".json";
      nlohmann::json j = read_json(dir / name);
      strip_timing(j);
      got[name] = j.dump();
      got["cloud_" + std::string(planner)] = slurp(dir / ("cloud_sphere_" + std::string(planner) + ".xyz"));
    }
    runs.push_back(std::move(got));
  }
  std::vector<std::string> differ;
  for (const auto& [name, bytes] : runs[0]) {
    if (bytes.empty() || runs[1][name] != bytes) differ.push_back(name);
  }
  std::string detail = std::to_string(runs[0].size() - differ.size()) + "/" +
                       std::to_string(runs[0].size()) + " artifacts byte-identical";
  for (const auto& d : differ) detail += "; differs: " + d;
  return {differ.empty(), detail};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (!tok.empty()) out.insert(std::stoi(tok));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("acceptance criteria");
  std::string only, allow;
  std::string workdir = (fs::temp_directory_path() / "nbv_acceptance").string();
  app.add_option("--only", only, "comma-separated criteria to run");
  app.add_option("--allow-fail", allow, "comma-separated criteria whose failure is tolerated");
  app.add_option("--workdir", workdir, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected = parse_list(only), allowed = parse_list(allow);
  const fs::path work(workdir);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"geometry round trip", geometry_round_trip},
      {"occupancy raycast oracle", occupancy_oracle},
      {"gradient suite", gradient_suite},
      {"4-5 flattened width", shape_claim},
      {"exhaustive NBV oracle", exhaustive_oracle},
      {"desk-scale training", [&] { return desk_training(work); }},
      {"reconstruction coverage", [&] { return reconstruction_coverage(work); }},
      {"planner timing ordering", planner_timing},
      {"coverage metric oracle", coverage_oracle},
      {"determinism", [&] { return determinism(work); }},
  };
  int unexpected = 0, failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %s  %-26s %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL",
                criteria[i].first.c_str(), o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    if (!o.pass) {
      ++failed;
      if (!allowed.count(id)) ++unexpected;
    }
  }
  std::printf("%d failing, %d not covered by --allow-fail\n", failed, unexpected);
  return unexpected == 0 ? 0 : 1;
}
