#pragma once

// nlohmann/json helpers shared by the config and checkpoint readers.

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "funmatch/error.hpp"
#include "funmatch/model.hpp"

namespace funmatch::json_io {

using json = nlohmann::json;

/// Rejects keys outside `allowed` so typos in config files surface as errors.
void require_only_keys(const json& object, std::initializer_list<std::string_view> allowed,
                       const std::string& context);

const json& require(const json& object, const char* key, const std::string& context);

template <typename V>
V get_or(const json& object, const char* key, V fallback, const std::string& context) {
  const auto it = object.find(key);
  if (it == object.end() || it->is_null()) return fallback;
  try {
    return it->get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

template <typename V>
V get(const json& object, const char* key, const std::string& context) {
  const json& value = require(object, key, context);
  try {
    return value.get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const json& object, const std::string& context);

}  // namespace funmatch::json_io
