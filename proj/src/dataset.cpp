#include "nbv/dataset.hpp"

#include <cmath>
#include <json.hpp>
#include <numeric>

#include "binary_io.hpp"
#include "nbv/error.hpp"

namespace nbv {

using nlohmann::json;

LabelMode parse_label_mode(const std::string& s) {
  if (s == "visibility") return LabelMode::Visibility;
  if (s == "simulated") return LabelMode::Simulated;
  throw Error(Errc::ConfigError, "unknown label mode '" + s + "' (visibility|simulated)");
}

std::string to_string(LabelMode m) {
  return m == LabelMode::Visibility ? "visibility" : "simulated";
}

ViewSphere DatasetMeta::sphere() const {
  if (cap_min_z) return generate_view_cap(sphere_center, sphere_radius, candidates, *cap_min_z);
  return generate_view_sphere(sphere_center, sphere_radius, candidates);
}

OccupancyGrid DatasetMeta::empty_grid() const {
  return new_grid(grid_center, grid_span, Index3::Constant(grid_dims));
}

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 json_vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

std::string DatasetMeta::to_json() const {
  json j;
  j["sphere_center"] = vec_json(sphere_center);
  j["sphere_radius"] = sphere_radius;
  j["candidates"] = candidates;
  j["cap_min_z"] = cap_min_z ? json(*cap_min_z) : json(nullptr);
  j["overlap_min"] = overlap_min;
  j["seed"] = seed;
  j["grid_center"] = vec_json(grid_center);
  j["grid_span"] = grid_span;
  j["grid_dims"] = grid_dims;
  j["label_mode"] = to_string(label_mode);
  j["camera"] = {{"fov_h", camera.fov_h},         {"fov_v", camera.fov_v},
                 {"res_u", camera.res_u},         {"res_v", camera.res_v},
                 {"min_range", camera.min_range}, {"max_range", camera.max_range},
                 {"noise_sigma", camera.noise_sigma}};
  j["objects"] = objects;
  return j.dump();
}

DatasetMeta DatasetMeta::from_json(const std::string& text) {
  DatasetMeta m;
  try {
    const json j = json::parse(text);
    m.sphere_center = json_vec(j.at("sphere_center"));
    m.sphere_radius = j.at("sphere_radius").get<double>();
    m.candidates = j.at("candidates").get<int>();
    if (!j.at("cap_min_z").is_null()) m.cap_min_z = j.at("cap_min_z").get<double>();
    m.overlap_min = j.at("overlap_min").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.grid_center = json_vec(j.at("grid_center"));
    m.grid_span = j.at("grid_span").get<double>();
    m.grid_dims = j.at("grid_dims").get<int>();
    m.label_mode = parse_label_mode(j.at("label_mode").get<std::string>());
    const json& c = j.at("camera");
    m.camera.fov_h = c.at("fov_h").get<double>();
    m.camera.fov_v = c.at("fov_v").get<double>();
    m.camera.res_u = c.at("res_u").get<int>();
    m.camera.res_v = c.at("res_v").get<int>();
    m.camera.min_range = c.at("min_range").get<double>();
    m.camera.max_range = c.at("max_range").get<double>();
    m.camera.noise_sigma = c.at("noise_sigma").get<double>();
    m.objects = j.at("objects").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, std::string("malformed dataset metadata: ") + e.what());
  }
  return m;
}

std::vector<net::Example> Dataset::examples() const {
  std::vector<net::Example> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back({s.grid, s.label});
  return out;
}

std::size_t label_candidate(const OccupancyGrid& grid, const Scene& scene,
                            const ViewSphere& sphere, const DatasetMeta& meta) {
  if (meta.label_mode == LabelMode::Visibility) {
    return exhaustive_nbv_index(grid, sphere, meta.camera, meta.overlap_min);
  }
  // Simulated: the overlap test still uses predicted visibility, the gain is
  // the number of voxels a noise-free scan from the candidate turns Occupied.
  if (sphere.views.empty()) throw Error(Errc::EmptyCandidateSet, "no candidate views");
  RangeCamera exact = meta.camera;
  exact.noise_sigma = 0.0;
  std::size_t best_any = 0, best_feasible = 0;
  long gain_any = -1, gain_feasible = -1;
  for (std::size_t i = 0; i < sphere.views.size(); ++i) {
    const double overlap = score_view(grid, sphere.views[i], meta.camera).overlap;
    OccupancyGrid trial = grid;
    trial.integrate_scan(render_scan(scene, sphere.views[i], exact), exact.max_range);
    long gain = 0;
    for (std::size_t v = 0; v < grid.size(); ++v) {
      if (trial.state_linear(v) == VoxelState::Occupied &&
          grid.state_linear(v) != VoxelState::Occupied) {
        ++gain;
      }
    }
    if (gain > gain_any) {
      best_any = i;
      gain_any = gain;
    }
    if (overlap >= meta.overlap_min && gain > gain_feasible) {
      best_feasible = i;
      gain_feasible = gain;
    }
  }
  return gain_feasible >= 0 ? best_feasible : best_any;
}

std::vector<Sample> generate_for_object(const Scene& scene, const DatasetMeta& meta,
                                        std::uint32_t object_id,
                                        const GenerationConfig& config) {
  if (config.scans_per_run < 2) {
    throw Error(Errc::ConfigError, "scans_per_run must be at least 2");
  }
  if (config.runs < 1) throw Error(Errc::ConfigError, "runs must be at least 1");
  const ViewSphere sphere = meta.sphere();
  std::vector<Sample> out;
  for (int run = 0; run < config.runs; ++run) {
    const std::uint64_t run_seed = Rng::derive(Rng::derive(meta.seed, object_id), run);
    Rng rng(run_seed);
    OccupancyGrid grid = meta.empty_grid();
    View view = sphere.views[rng.below(sphere.views.size())];
    for (int scan = 0; scan < config.scans_per_run; ++scan) {
      grid.integrate_scan(render_scan(scene, view, meta.camera, Rng::derive(run_seed, 100 + scan)),
                          meta.camera.max_range);
      if (scan + 1 == config.scans_per_run) break;
      const std::size_t idx = label_candidate(grid, scene, sphere, meta);
      Sample s;
      s.grid = to_input_tensor(grid);
      const Vec3 unit = (sphere.views[idx].position - sphere.center) / sphere.radius;
      s.label = {static_cast<float>(unit.x()), static_cast<float>(unit.y()),
                 static_cast<float>(unit.z())};
      s.object_id = object_id;
      s.scan_index = static_cast<std::uint32_t>(scan);
      out.push_back(std::move(s));
      view = sphere.views[idx];
    }
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  std::uint64_t seed) {
  if (dataset.samples.empty()) throw Error(Errc::EmptyDataset, "cannot split an empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(Errc::ConfigError, "train fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  // Guard against 0.8 * 10 evaluating to 8.000000000000002.
  const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * n - 1e-9));
  std::pair<Dataset, Dataset> parts{{dataset.meta, {}}, {dataset.meta, {}}};
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? parts.first : parts.second).samples.push_back(dataset.samples[order[i]]);
  }
  return parts;
}

namespace {
constexpr std::string_view kMagic = "NBVD";
constexpr std::size_t kSampleBytes = kInputSize * 4 + 3 * 4 + 2 * 4;
}  // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  io::Writer out;
  out.reserve(64 + dataset.samples.size() * kSampleBytes);
  out.tag(kMagic);
  out.u32(kDatasetFormatVersion);
  out.str(dataset.meta.to_json());
  out.u64(dataset.samples.size());
  for (const Sample& s : dataset.samples) {
    if (s.grid.size() != kInputSize) {
      throw Error(Errc::WrongDims, "sample grid has " + std::to_string(s.grid.size()) + " values");
    }
    for (float v : s.grid) out.f32(v);
    for (float v : s.label) out.f32(v);
    out.u32(s.object_id);
    out.u32(s.scan_index);
  }
  out.commit(path);
}

Dataset read_dataset(const std::filesystem::path& path) {
  io::Reader in = io::Reader::open(path);
  if (!in.tag(kMagic)) {
    throw Error(Errc::FormatVersionMismatch, path.string() + " is not a dataset file");
  }
  const std::uint32_t version = in.u32();
  if (version != kDatasetFormatVersion) {
    throw Error(Errc::FormatVersionMismatch,
                path.string() + ": dataset format version " + std::to_string(version) +
                    ", expected " + std::to_string(kDatasetFormatVersion));
  }
  const std::string meta_text = in.str();
  const std::uint64_t count = in.u64();
  if (count > in.remaining() / kSampleBytes) {
    throw Error(Errc::IoError, path.string() + ": sample count exceeds file size");
  }
  Dataset d;
  d.samples.resize(count);
  for (Sample& s : d.samples) {
    s.grid.resize(kInputSize);
    for (float& v : s.grid) v = in.f32();
    for (float& v : s.label) v = in.f32();
    s.object_id = in.u32();
    s.scan_index = in.u32();
  }
  in.finish();
  // Metadata is parsed after the checksum so corruption reports as such.
  d.meta = DatasetMeta::from_json(meta_text);
  return d;
}

VerifyReport verify_dataset(const Dataset& dataset) {
  const ViewSphere sphere = dataset.meta.sphere();
  VerifyReport r;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    ++r.checked;
    const Vec3 label(s.label[0], s.label[1], s.label[2]);
    std::optional<std::size_t> member;
    for (std::size_t c = 0; c < sphere.views.size(); ++c) {
      const Vec3 unit = (sphere.views[c].position - sphere.center) / sphere.radius;
      if ((unit - label).norm() < 1e-5) {
        member = c;
        break;
      }
    }
    bool ok = member.has_value();
    if (ok && dataset.meta.label_mode == LabelMode::Visibility) {
      OccupancyGrid grid = dataset.meta.empty_grid();
      load_probabilities(grid, s.grid);
      const std::size_t best =
          exhaustive_nbv_index(grid, sphere, dataset.meta.camera, dataset.meta.overlap_min);
      // Two candidates with identical scores are interchangeable labels.
      const ViewScore a = score_view(grid, sphere.views[best], dataset.meta.camera);
      const ViewScore b = score_view(grid, sphere.views[*member], dataset.meta.camera);
      ok = best == *member || (a.gain == b.gain && a.overlap == b.overlap);
    }
    if (ok) {
      ++r.valid;
    } else {
      r.failures.push_back(i);
    }
  }
  return r;
}

}  // namespace nbv
