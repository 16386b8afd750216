#include "commands.hpp"

#include <fcntl.h>
#include <fnmatch.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>

#include "config.hpp"
#include "nbv/dataset.hpp"
#include "nbv/error.hpp"
#include "nbv/nbvnet.hpp"
#include "nbv/planners.hpp"
#include "nbv/reconstruction.hpp"
#include "nbv/shapes.hpp"

namespace nbv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Per-component seeds fanned out from the top-level seed.
enum SeedStream : std::uint64_t {
  kDatasetSeed = 1,
  kSplitSeed = 2,
  kInitSeed = 3,
  kTrainSeed = 4,
  kReferenceSeed = 5,
  kNoiseSeed = 6,
};

class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".nbv.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(Errc::IoError, "cannot create output directory " + dir.string());
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST) {
        throw Error(Errc::ConfigError, "output directory " + dir.string() +
                                           " is in use (remove " + path_.string() +
                                           " if no other run is active)");
      }
      throw Error(Errc::IoError, "cannot create lock file " + path_.string());
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

int exit_code_for(Errc c) {
  switch (c) {
    case Errc::ConfigError:
    case Errc::IoError:
    case Errc::ParseError:
    case Errc::FormatVersionMismatch:
    case Errc::ChecksumMismatch:
    case Errc::UnknownVariant:
      return 2;
    default:
      return 3;
  }
}

// Everything derived from the config that several commands share.
struct Setup {
  const Config& cfg;
  fs::path out_dir;
  RangeCamera camera;
  double table_z;
  ViewSphere sphere;

  explicit Setup(const Config& c) : cfg(c), out_dir(c.str("output_dir")) {
    const double deg = std::numbers::pi / 180.0;
    camera.fov_h = c.num("camera.fov_h_deg") * deg;
    camera.fov_v = c.num("camera.fov_v_deg") * deg;
    camera.res_u = c.integer("camera.res_u");
    camera.res_v = c.integer("camera.res_v");
    camera.min_range = c.num("camera.min_range");
    camera.max_range = c.num("camera.max_range");
    camera.noise_sigma = c.num("camera.noise_sigma");
    try {
      camera.validate();
    } catch (const Error& e) {
      throw Error(Errc::ConfigError, std::string("camera settings: ") + e.what());
    }
    if (!(c.num("object.size") > 0.0)) throw Error(Errc::ConfigError, "object.size must be positive");
    // Every object rests on the same table plane, so one candidate set
    // serves the whole corpus.
    table_z = -c.num("object.size");
    sphere = make_sphere(c.integer("sphere.count"));
  }

  ViewSphere make_sphere(int count) const {
    return generate_view_cap(Vec3::Zero(), cfg.num("sphere.radius"), count,
                             table_z + cfg.num("sphere.min_height"));
  }

  std::optional<double> table() const {
    return cfg.flag("scene.table") ? std::optional<double>(table_z) : std::nullopt;
  }

  // Normalized object standing on the table.
  Mesh object(const std::string& name) const {
    const auto& names = shapes::procedural_names();
    Mesh raw = std::find(names.begin(), names.end(), name) != names.end()
                   ? shapes::make_object(name)
                   : load_mesh(name);
    Mesh m = shapes::normalize(raw, cfg.num("object.size"));
    return transform(m, Mat3::Identity(), Vec3(0.0, 0.0, table_z - m.bounds().lo.z()));
  }

  Scene scene(const Mesh& m) const { return Scene({m}, table()); }

  double regression_k() const {
    const double k = cfg.num("reconstruct.k");
    if (k < 0.0) throw Error(Errc::ConfigError, "reconstruct.k must be positive, or 0 to derive it");
    if (k > 0.0) return k;
    return compute_scale_factor(0.5 * std::min(camera.fov_h, camera.fov_v),
                                2.0 * cfg.num("object.size"), cfg.num("sphere.radius"));
  }

  OccupancyGrid grid() const {
    return new_grid(Vec3::Zero(), cfg.num("grid.span"), Index3::Constant(cfg.integer("grid.dims")));
  }

  DatasetMeta meta() const {
    DatasetMeta m;
    m.sphere_center = sphere.center;
    m.sphere_radius = sphere.radius;
    m.candidates = static_cast<int>(sphere.views.size());
    m.cap_min_z = table_z + cfg.num("sphere.min_height");
    m.overlap_min = cfg.num("planner.overlap_min");
    m.seed = Rng::derive(cfg.u64("seed"), kDatasetSeed);
    m.grid_center = Vec3::Zero();
    m.grid_span = cfg.num("grid.span");
    m.grid_dims = cfg.integer("grid.dims");
    m.label_mode = parse_label_mode(cfg.str("dataset.label_mode"));
    m.camera = camera;
    m.objects = cfg.list("objects");
    return m;
  }

  fs::path path_or(const std::string& key, const std::string& fallback) const {
    const std::string p = cfg.str(key);
    return p.empty() ? out_dir / fallback : fs::path(p);
  }
  fs::path dataset_path() const { return path_or("dataset.path", "dataset.nbvd"); }
  fs::path weights_path() const { return path_or("net.weights", "weights.nbvw"); }
  fs::path class_weights_path() const {
    return path_or("net.classification_weights", "classification_weights.nbvw");
  }
};

std::string stem_of(const std::string& object) {
  const fs::path p(object);
  return p.has_extension() || object.find('/') != std::string::npos ? p.stem().string() : object;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(Errc::IoError, "cannot write " + path.string());
  f << text;
}

std::string fmt_double(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_gen_dataset(const Setup& s, bool verify, std::ostream& out, std::ostream& err) {
  Dataset d;
  d.meta = s.meta();
  GenerationConfig gen{s.cfg.integer("dataset.runs"), s.cfg.integer("dataset.scans")};
  std::string summary;
  for (std::size_t i = 0; i < d.meta.objects.size(); ++i) {
    const std::string& name = d.meta.objects[i];
    const Scene scene = s.scene(s.object(name));
    auto samples = generate_for_object(scene, d.meta, static_cast<std::uint32_t>(i), gen);
    summary += name + ": " + std::to_string(samples.size()) + " samples\n";
    d.samples.insert(d.samples.end(), std::make_move_iterator(samples.begin()),
                     std::make_move_iterator(samples.end()));
  }
  summary += "total: " + std::to_string(d.samples.size()) + " samples\n";
  const fs::path path = s.dataset_path();
  write_dataset(d, path);
  write_text(s.out_dir / "dataset_summary.txt", summary);
  out << summary << "wrote " << path.string() << "\n";
  if (verify) {
    const VerifyReport r = verify_dataset(d);
    out << "verified " << r.valid << "/" << r.checked << " labels\n";
    if (r.valid != r.checked) {
      err << "error[VerifyFailed]: " << r.checked - r.valid
          << " labels are not the candidate argmax\n";
      return 3;
    }
  }
  return 0;
}

std::size_t nearest_view(const std::vector<View>& views, const Vec3& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < views.size(); ++i) {
    if ((views[i].position - p).squaredNorm() < (views[best].position - p).squaredNorm()) best = i;
  }
  return best;
}

int cmd_train(const Setup& s, std::ostream& out) {
  const Dataset d = read_dataset(s.dataset_path());
  if (d.samples.empty()) throw Error(Errc::EmptyDataset, "dataset has no samples");
  const std::uint64_t seed = s.cfg.u64("seed");
  const auto [train_set, val_set] =
      split(d, s.cfg.num("dataset.train_fraction"), Rng::derive(seed, kSplitSeed));

  const std::string task = s.cfg.str("train.task");
  if (task != "regression" && task != "classification") {
    throw Error(Errc::ConfigError, "train.task must be regression or classification");
  }
  const bool classify = task == "classification";
  const std::vector<View> class_views =
      classify ? s.make_sphere(s.cfg.integer("classification.views")).views : std::vector<View>{};
  const std::size_t width = classify ? class_views.size() : 3;

  // Classification targets live in the Tanh range: +1 for the class view
  // nearest the labelled position, -1 elsewhere.
  auto targets_for = [&](const Dataset& part) {
    std::vector<std::vector<float>> t;
    for (const Sample& smp : part.samples) {
      if (!classify) {
        t.emplace_back(smp.label.begin(), smp.label.end());
        continue;
      }
      const Vec3 p = s.sphere.center + s.sphere.radius * Vec3(smp.label[0], smp.label[1], smp.label[2]);
      std::vector<float> v(width, -1.0f);
      v[nearest_view(class_views, p)] = 1.0f;
      t.push_back(std::move(v));
    }
    return t;
  };
  const auto train_targets = targets_for(train_set);
  const auto val_targets = targets_for(val_set);
  auto examples = [](const Dataset& part, const std::vector<std::vector<float>>& t) {
    std::vector<net::Example> e;
    for (std::size_t i = 0; i < part.samples.size(); ++i) e.push_back({part.samples[i].grid, t[i]});
    return e;
  };
  const auto train_ex = examples(train_set, train_targets);
  const auto val_ex = examples(val_set, val_targets);

  const net::DropoutStart drop = net::parse_dropout_start(s.cfg.str("net.dropout_start"));
  net::NbvNet model =
      net::build_variant(s.cfg.str("net.variant"), width, drop, Rng::derive(seed, kInitSeed));
  if (const std::string resume = s.cfg.str("train.resume"); !resume.empty()) {
    net::load_weights_into(model, resume);
  }

  net::TrainConfig tc;
  tc.epochs = s.cfg.integer("train.epochs");
  tc.learning_rate = s.cfg.num("train.lr");
  tc.batch_size = s.cfg.integer("train.batch");
  tc.chunk_size = s.cfg.integer("train.chunk");
  tc.dropout_start = drop;
  tc.seed = Rng::derive(seed, kTrainSeed);

  const fs::path log_path = s.out_dir / (classify ? "train_log_classification.csv" : "train_log.csv");
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw Error(Errc::IoError, "cannot write " + log_path.string());
  log << "epoch,train_mse,val_mse,val_mae\n";
  out << "training " << model.name() << " on " << train_ex.size() << " samples, validating on "
      << val_ex.size() << "\n";
  net::train(model, train_ex, val_ex, tc, [&](const net::EpochRecord& r) {
    log << r.epoch << "," << fmt_double("%.9g", r.train_mse) << ","
        << fmt_double("%.9g", r.val_mse) << "," << fmt_double("%.9g", r.val_mae) << "\n";
    log.flush();
    out << "epoch " << r.epoch << " train_mse " << fmt_double("%.6f", r.train_mse) << " val_mse "
        << fmt_double("%.6f", r.val_mse) << " val_mae " << fmt_double("%.6f", r.val_mae) << "\n";
  });
  const fs::path weights = classify ? s.class_weights_path() : s.weights_path();
  net::save_weights(model, weights);
  out << "wrote " << weights.string() << " and " << log_path.string() << "\n";
  return 0;
}

std::unique_ptr<Planner> make_planner(const Setup& s, const std::string& tag) {
  if (tag == "infogain") {
    return std::make_unique<InfoGainPlanner>(s.sphere, s.camera, s.cfg.num("planner.overlap_min"));
  }
  if (tag == "classification") {
    net::NbvNet model = net::load_weights(s.class_weights_path());
    std::vector<View> views = s.make_sphere(s.cfg.integer("classification.views")).views;
    if (model.output_width() != views.size()) {
      throw Error(Errc::ArityMismatch, s.class_weights_path().string() + " has " +
                                           std::to_string(model.output_width()) + " outputs for " +
                                           std::to_string(views.size()) + " class views");
    }
    return std::make_unique<ClassificationPlanner>(std::move(model), std::move(views));
  }
  if (tag == "regression") {
    const double k = s.regression_k();
    net::NbvNet model = net::load_weights(s.weights_path());
    if (model.output_width() != 3) {
      throw Error(Errc::ArityMismatch, s.weights_path().string() + " is not a regression network");
    }
    return std::make_unique<RegressionPlanner>(std::move(model), k, s.sphere.center);
  }
  throw Error(Errc::ConfigError,
              "unknown planner '" + tag + "' (regression|classification|infogain)");
}

int cmd_reconstruct(const Setup& s, std::ostream& out, std::ostream& err) {
  const std::string object = s.cfg.str("reconstruct.object");
  const Mesh mesh = s.object(object);
  const Scene scene = s.scene(mesh);
  const PointCloud reference = reference_cloud_from_mesh(
      mesh, s.cfg.integer("coverage.reference_points"),
      Rng::derive(s.cfg.u64("seed"), kReferenceSeed));
  const bool compare = s.cfg.flag("reconstruct.compare");
  const std::vector<std::string> tags =
      compare ? std::vector<std::string>{"regression", "classification", "infogain"}
              : std::vector<std::string>{s.cfg.str("reconstruct.planner")};

  // Build every planner first so a missing weight file fails before any run.
  std::vector<std::unique_ptr<Planner>> planners;
  for (const auto& t : tags) planners.push_back(make_planner(s, t));

  RunOptions opt;
  opt.max_scans = s.cfg.integer("reconstruct.scans");
  opt.coverage_distance = s.cfg.num("coverage.distance");
  opt.table_z = s.table();
  opt.table_margin = s.cfg.num("grid.span") / s.cfg.integer("grid.dims");
  opt.noise_seed = Rng::derive(s.cfg.u64("seed"), kNoiseSeed);

  const std::string name = stem_of(object);
  const std::string label = compare ? "compare" : tags.front();
  json report{{"object", object}, {"config", s.cfg.values()}, {"runs", json::array()}};
  std::string failure;
  for (auto& planner : planners) {
    const ReconstructionRun r =
        run(scene, reference, *planner, s.camera, front_view(s.sphere), s.grid(), opt);
    report["runs"].push_back(run_to_json(r));
    const std::string base = name + "_" + r.planner;
    {
      std::ofstream g(s.out_dir / ("grid_" + base + ".txt"), std::ios::trunc);
      write_grid_export(r.grid, g);
      std::ofstream c(s.out_dir / ("cloud_" + base + ".xyz"), std::ios::trunc);
      write_cloud(r.cloud, c);
    }
    out << r.planner << ": " << r.iterations.size() << " scans, coverage "
        << fmt_double("%.2f", r.final_coverage()) << "%, mean planning time "
        << fmt_double("%.4f", r.mean_planning_seconds()) << " s\n";
    if (r.incomplete && failure.empty()) failure = r.error;
  }
  const fs::path report_path = s.out_dir / ("report_" + name + "_" + label + ".json");
  write_text(report_path, report.dump(2) + "\n");
  out << "wrote " << report_path.string() << "\n";
  if (!failure.empty()) {
    const auto colon = failure.find(": ");
    err << "error[" << failure.substr(0, colon) << "]: " << failure.substr(colon + 2)
        << " (run incomplete)\n";
    return 3;
  }
  return 0;
}

std::vector<fs::path> expand(const std::string& pattern) {
  const fs::path p(pattern);
  if (pattern.find_first_of("*?[") == std::string::npos) {
    if (!fs::exists(p)) throw Error(Errc::IoError, "report " + pattern + " does not exist");
    return {p};
  }
  const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
  std::vector<fs::path> hits;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    if (e.is_regular_file() &&
        ::fnmatch(p.filename().c_str(), e.path().filename().c_str(), 0) == 0) {
      hits.push_back(e.path());
    }
  }
  if (hits.empty()) throw Error(Errc::IoError, "no report matches " + pattern);
  std::sort(hits.begin(), hits.end());
  return hits;
}

int cmd_eval(const Setup& s, std::ostream& out) {
  std::vector<std::string> patterns = s.cfg.list("eval.reports");
  if (patterns.empty()) patterns.push_back((s.out_dir / "report_*.json").string());
  std::vector<fs::path> files;
  for (const auto& pat : patterns) {
    for (auto& f : expand(pat)) files.push_back(std::move(f));
  }

  std::string csv = "report,object,planner,scans,coverage,mean_planning_seconds,incomplete\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-15s %5s %9s %14s\n", "object", "planner", "scans",
                "coverage", "mean_plan_s");
  out << line;
  for (const auto& f : files) {
    json report;
    try {
      std::ifstream in(f);
      report = json::parse(in);
      for (const json& r : report.at("runs")) {
        const std::string planner = r.at("planner").get<std::string>();
        const json& its = r.at("iterations");
        double sum = 0.0;
        std::size_t calls = 0;
        for (const json& it : its) {
          if (!it.at("planning_seconds").is_null()) {
            sum += it.at("planning_seconds").get<double>();
            ++calls;
          }
        }
        const double mean = calls ? sum / calls : 0.0;
        const double cov = its.empty() ? 0.0 : its.back().at("coverage").get<double>();
        const std::string object = report.at("object").get<std::string>();
        std::snprintf(line, sizeof line, "%-16s %-15s %5zu %8.2f%% %14.6f%s\n",
                      stem_of(object).c_str(), planner.c_str(), its.size(), cov, mean,
                      r.at("incomplete").get<bool>() ? "  (incomplete)" : "");
        out << line;
        csv += f.string() + "," + object + "," + planner + "," + std::to_string(its.size()) + "," +
               fmt_double("%.6f", cov) + "," + fmt_double("%.9g", mean) + "," +
               (r.at("incomplete").get<bool>() ? "true" : "false") + "\n";
      }
    } catch (const json::exception& e) {
      throw Error(Errc::ParseError, f.string() + ": " + e.what());
    }
  }
  write_text(s.out_dir / "eval.csv", csv);
  out << "wrote " << (s.out_dir / "eval.csv").string() << "\n";
  return 0;
}

void write_views(const fs::path& path, const std::vector<View>& views) {
  std::string text = "index,x,y,z,yaw,pitch,roll\n";
  for (std::size_t i = 0; i < views.size(); ++i) {
    const View& v = views[i];
    text += std::to_string(i);
    for (double x : {v.position.x(), v.position.y(), v.position.z(), v.yaw, v.pitch, v.roll}) {
      text += "," + fmt_double("%.17g", x);
    }
    text += "\n";
  }
  write_text(path, text);
}

int cmd_export(const Setup& s, std::ostream& out) {
  const fs::path dir = s.out_dir / "export";
  fs::create_directories(dir);
  write_views(dir / "views.csv", s.sphere.views);
  write_views(dir / "class_views.csv", s.make_sphere(s.cfg.integer("classification.views")).views);
  std::vector<std::string> names = s.cfg.list("objects");
  const std::string target = s.cfg.str("reconstruct.object");
  if (std::find(names.begin(), names.end(), target) == names.end()) names.push_back(target);
  for (const auto& name : names) {
    const Mesh m = s.object(name);
    save_mesh(m, dir / ("object_" + stem_of(name) + ".obj"));
    std::ofstream c(dir / ("reference_" + stem_of(name) + ".xyz"), std::ios::trunc);
    write_cloud(reference_cloud_from_mesh(m, s.cfg.integer("coverage.reference_points"),
                                          Rng::derive(s.cfg.u64("seed"), kReferenceSeed)),
                c);
  }
  out << "wrote " << names.size() << " objects and the candidate views to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Next-best-view planning: dataset generation, training and reconstruction"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> planner, variant, dropout, task, resume;
  std::optional<int> scans;
  std::optional<double> k;
  bool compare = false, verify = false;
  std::vector<std::string> sets;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file with flat dotted keys");
    sub->add_option("--seed", seed, "top-level seed");
    sub->add_option("--set", sets, "override a config key: key=value (repeatable)");
  };
  auto* gen = app.add_subcommand("gen-dataset", "generate a labelled dataset");
  common(gen);
  gen->add_option("--scans", scans, "scans per reconstruction run");
  gen->add_flag("--verify", verify, "re-score every label after generation");

  auto* trn = app.add_subcommand("train", "train a network on a dataset");
  common(trn);
  trn->add_option("--variant", variant, "3-3|3-5|4-3|4-5");
  trn->add_option("--dropout-start", dropout, "none|conv1..conv4|fc");
  trn->add_option("--task", task, "regression|classification");
  trn->add_option("--resume", resume, "continue from this weight file");

  auto* rec = app.add_subcommand("reconstruct", "reconstruct an object with a planner");
  common(rec);
  rec->add_option("--planner", planner, "regression|classification|infogain");
  rec->add_option("--scans", scans, "stop after this many scans");
  rec->add_option("--k", k, "scale applied to regression predictions");
  rec->add_flag("--compare", compare, "run all three planners");

  auto* evl = app.add_subcommand("eval", "tabulate coverage and planning time from reports");
  common(evl);
  auto* exp = app.add_subcommand("export", "write normalized meshes, reference clouds and views");
  common(exp);

  std::vector<std::string> argv_store{"nbv"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[ConfigError]: " << e.what() << "\n";
    return 2;
  }

  try {
    std::vector<std::pair<std::string, json>> overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw Error(Errc::ConfigError, "--set expects key=value");
      overrides.emplace_back(s.substr(0, eq), parse_value(s.substr(eq + 1)));
    }
    if (seed) overrides.emplace_back("seed", *seed);
    if (planner) overrides.emplace_back("reconstruct.planner", *planner);
    if (variant) overrides.emplace_back("net.variant", *variant);
    if (dropout) overrides.emplace_back("net.dropout_start", *dropout);
    if (task) overrides.emplace_back("train.task", *task);
    if (resume) overrides.emplace_back("train.resume", *resume);
    if (k) overrides.emplace_back("reconstruct.k", *k);
    if (compare) overrides.emplace_back("reconstruct.compare", true);
    if (scans) overrides.emplace_back(gen->parsed() ? "dataset.scans" : "reconstruct.scans", *scans);

    const Config cfg = Config::resolve(config_path, overrides);
    const Setup setup(cfg);
    OutputLock lock(setup.out_dir);
    if (gen->parsed()) return cmd_gen_dataset(setup, verify, out, err);
    if (trn->parsed()) return cmd_train(setup, out);
    if (rec->parsed()) return cmd_reconstruct(setup, out, err);
    if (evl->parsed()) return cmd_eval(setup, out);
    return cmd_export(setup, out);
  } catch (const Error& e) {
    err << "error[" << errc_name(e.code()) << "]: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error[IoError]: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace nbv::cli
