#pragma once

// Strict JSON object reader: every key must be consumed, unknown keys are
// reported as configuration errors.

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "semlc/error.hpp"

namespace semlc {

class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : json_(j), path_(std::move(path)) {
    require(j.is_object(), ErrorKind::config, path_ + " must be a JSON object");
  }

  bool has(const std::string& key) const { return json_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!json_.contains(key)) return fallback;
    return required<T>(key);
  }

  template <typename T>
  T required(const std::string& key) {
    seen_.insert(key);
    require(json_.contains(key), ErrorKind::config, path_ + "." + key + " is required");
    try {
      return json_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, path_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json& child(const std::string& key) {
    seen_.insert(key);
    require(json_.contains(key), ErrorKind::config, path_ + "." + key + " is required");
    return json_.at(key);
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  /// Throws ConfigError naming the first key that was never read.
  void finish() const {
    for (const auto& [key, value] : json_.items())
      require(seen_.count(key) > 0, ErrorKind::config, "unknown key " + path_ + "." + key);
  }

 private:
  const nlohmann::json& json_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace semlc
