#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nbv::cli {

/// Flat dotted-key configuration. Every key has a default; files and flags
/// may only override known keys with a value of the same JSON type.
class Config {
 public:
  static const nlohmann::json& defaults();

  /// Defaults, then the file at `path` (if any), then `overrides` in order.
  static Config resolve(const std::optional<std::string>& path,
                        const std::vector<std::pair<std::string, nlohmann::json>>& overrides);

  void set(const std::string& key, const nlohmann::json& value);

  double num(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::string str(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;

  const nlohmann::json& values() const { return values_; }

 private:
  const nlohmann::json& at(const std::string& key) const;
  nlohmann::json values_ = defaults();
};

/// Parses `text` as JSON; bare words fall back to a JSON string.
nlohmann::json parse_value(const std::string& text);

}  // namespace nbv::cli
