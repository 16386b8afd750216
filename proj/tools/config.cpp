#include "config.hpp"

#include <fstream>

#include "nbv/error.hpp"

namespace nbv::cli {

using nlohmann::json;

const json& Config::defaults() {
  static const json d = {
      {"seed", 0},
      {"output_dir", "out"},
      // Procedural names (see README) or paths to ASCII v/f mesh files.
      {"objects", {"box", "cylinder", "torus", "cone", "composite"}},
      {"object.size", 0.12},  // half-extent after normalization, meters
      {"scene.table", true},
      {"camera.fov_h_deg", 45.0},
      {"camera.fov_v_deg", 45.0},
      {"camera.res_u", 64},
      {"camera.res_v", 64},
      {"camera.min_range", 0.1},
      {"camera.max_range", 10.0},
      {"camera.noise_sigma", 0.0},
      {"grid.dims", 32},
      {"grid.span", 0.32},
      {"sphere.radius", 0.4},
      {"sphere.count", 20},
      {"sphere.min_height", 0.02},  // candidate clearance above the table
      {"classification.views", 14},
      {"planner.overlap_min", 0.15},
      {"dataset.runs", 10},
      {"dataset.scans", 6},
      {"dataset.label_mode", "visibility"},
      {"dataset.path", ""},
      {"dataset.train_fraction", 0.8},
      {"net.variant", "4-5"},
      {"net.dropout_start", "none"},
      {"net.weights", ""},
      {"net.classification_weights", ""},
      {"train.task", "regression"},
      {"train.epochs", 600},
      {"train.lr", 1e-4},
      {"train.batch", 250},
      {"train.chunk", 16},
      {"train.resume", ""},
      {"reconstruct.object", "sphere"},
      {"reconstruct.planner", "infogain"},
      {"reconstruct.scans", 10},
      {"reconstruct.k", 0.0},  // 0: derived from the camera FOV and object size
      {"reconstruct.compare", false},
      {"coverage.distance", 0.005},
      {"coverage.reference_points", 5000},
      {"eval.reports", json::array()},
  };
  return d;
}

namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // Integer keys reject fractional values; real keys accept integers.
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

}  // namespace

void Config::set(const std::string& key, const json& value) {
  const json& d = defaults();
  auto it = d.find(key);
  if (it == d.end()) throw Error(Errc::ConfigError, "unknown config key '" + key + "'");
  json v = value;
  // A single word is accepted where a list is expected.
  if (it->is_array() && v.is_string()) v = json::array({v});
  if (!same_kind(*it, v)) {
    throw Error(Errc::ConfigError, "config key '" + key + "' expects " +
                                       std::string(it->type_name()) + ", got " + v.dump());
  }
  if (it->is_number_unsigned() || it->is_number_integer()) {
    if (v.is_number_integer() && v.get<std::int64_t>() < 0 && key == "seed") {
      throw Error(Errc::ConfigError, "seed must be non-negative");
    }
  }
  values_[key] = v;
}

Config Config::resolve(const std::optional<std::string>& path,
                       const std::vector<std::pair<std::string, json>>& overrides) {
  Config c;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw Error(Errc::IoError, "cannot open config file " + *path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(Errc::ConfigError, *path + ": " + e.what());
    }
    if (!file.is_object()) throw Error(Errc::ConfigError, *path + ": expected a JSON object");
    for (auto& [key, value] : file.items()) c.set(key, value);
  }
  for (const auto& [key, value] : overrides) c.set(key, value);
  return c;
}

const json& Config::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(Errc::ConfigError, "unknown config key '" + key + "'");
  return *it;
}

double Config::num(const std::string& key) const { return at(key).get<double>(); }
int Config::integer(const std::string& key) const { return at(key).get<int>(); }
std::uint64_t Config::u64(const std::string& key) const { return at(key).get<std::uint64_t>(); }
bool Config::flag(const std::string& key) const { return at(key).get<bool>(); }
std::string Config::str(const std::string& key) const { return at(key).get<std::string>(); }
std::vector<std::string> Config::list(const std::string& key) const {
  return at(key).get<std::vector<std::string>>();
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

}  // namespace nbv::cli
