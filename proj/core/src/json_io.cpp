#include "json_io.hpp"

#include <algorithm>

namespace funmatch::json_io {

void require_only_keys(const json& object, std::initializer_list<std::string_view> allowed,
                       const std::string& context) {
  if (!object.is_object()) throw ConfigError(context + ": expected a JSON object");
  for (const auto& [key, value] : object.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(context + ": unknown key '" + key + "'");
    }
  }
}

const json& require(const json& object, const char* key, const std::string& context) {
  const auto it = object.find(key);
  if (it == object.end() || it->is_null()) throw ConfigError(context + ": missing required key '" + key + "'");
  return *it;
}

json model_config_to_json(const ModelConfig& config) {
  json layers = json::array();
  for (const LayerSpec& layer : config.layers) {
    json l{{"type", std::string(to_string(layer.kind))}};
    if (layer.kind == LayerKind::conv) {
      l["channels"] = layer.units;
      l["stride"] = layer.stride;
    } else if (layer.kind == LayerKind::dense) {
      l["width"] = layer.units;
    }
    layers.push_back(std::move(l));
  }
  return json{{"input_resolution", config.input_resolution},
              {"input_channels", config.input_channels},
              {"classes", config.classes},
              {"layers", std::move(layers)}};
}

ModelConfig model_config_from_json(const json& object, const std::string& context) {
  require_only_keys(object, {"input_resolution", "input_channels", "classes", "layers", "preset"}, context);
  ModelConfig config;
  const auto preset = get_or<std::string>(object, "preset", "", context);
  const auto classes = get<std::size_t>(object, "classes", context);
  const auto resolution = get_or<std::size_t>(object, "input_resolution", 28, context);
  const auto channels = get_or<std::size_t>(object, "input_channels", 1, context);
  if (!preset.empty()) {
    if (object.contains("layers")) throw ConfigError(context + ": give either 'preset' or 'layers', not both");
    if (preset == "reference_teacher") {
      return ModelConfig::reference_teacher(classes, resolution, channels);
    }
    if (preset == "reference_student") {
      return ModelConfig::reference_student(classes, resolution, channels);
    }
    throw ConfigError(context + ".preset: unknown preset '" + preset + "'");
  }
  config.classes = classes;
  config.input_resolution = resolution;
  config.input_channels = channels;
  const json& layers = require(object, "layers", context);
  if (!layers.is_array()) throw ConfigError(context + ".layers: expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string lctx = context + ".layers[" + std::to_string(i) + "]";
    const json& l = layers[i];
    const auto type = get<std::string>(l, "type", lctx);
    if (type == "conv") {
      require_only_keys(l, {"type", "channels", "stride"}, lctx);
      config.layers.push_back(LayerSpec::conv(get<std::size_t>(l, "channels", lctx), get_or<int>(l, "stride", 1, lctx)));
    } else if (type == "dense") {
      require_only_keys(l, {"type", "width"}, lctx);
      config.layers.push_back(LayerSpec::dense(get<std::size_t>(l, "width", lctx)));
    } else if (type == "relu" || type == "global_avg_pool" || type == "flatten") {
      require_only_keys(l, {"type"}, lctx);
      config.layers.push_back(type == "relu"              ? LayerSpec::relu()
                              : type == "global_avg_pool" ? LayerSpec::global_avg_pool()
                                                          : LayerSpec::flatten());
    } else {
      throw ConfigError(lctx + ": unknown layer type '" + type + "'");
    }
  }
  config.validate();
  return config;
}

}  // namespace funmatch::json_io
