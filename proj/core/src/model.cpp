#include "funmatch/model.hpp"

#include <cmath>
#include <random>

#include "funmatch/rng.hpp"
#include "json_io.hpp"

namespace funmatch {

namespace {

std::string layer_label(std::size_t index, const LayerSpec& layer) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(layer.kind)) + ")";
}

std::string param_prefix(std::size_t index, const LayerSpec& layer) {
  return std::string(layer.kind == LayerKind::conv ? "conv" : "dense") + std::to_string(index);
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

ModelConfig ModelConfig::reference_teacher(std::size_t classes, std::size_t resolution, std::size_t channels) {
  ModelConfig c;
  c.layers = {LayerSpec::conv(32, 2), LayerSpec::relu(), LayerSpec::conv(64, 2), LayerSpec::relu(),
              LayerSpec::conv(64, 2), LayerSpec::relu(), LayerSpec::conv(128, 1), LayerSpec::relu(),
              LayerSpec::global_avg_pool(), LayerSpec::dense(classes)};
  c.input_resolution = resolution;
  c.input_channels = channels;
  c.classes = classes;
  return c;
}

ModelConfig ModelConfig::reference_student(std::size_t classes, std::size_t resolution, std::size_t channels) {
  ModelConfig c;
  c.layers = {LayerSpec::conv(16, 2), LayerSpec::relu(), LayerSpec::conv(32, 2), LayerSpec::relu(),
              LayerSpec::global_avg_pool(), LayerSpec::dense(classes)};
  c.input_resolution = resolution;
  c.input_channels = channels;
  c.classes = classes;
  return c;
}

void ModelConfig::validate() const {
  (void)parameter_shapes();
}

std::vector<std::pair<std::string, Shape>> ModelConfig::parameter_shapes() const {
  if (layers.empty()) throw ConfigError("model config has no layers");
  if (input_channels == 0 || input_resolution == 0) throw ConfigError("model input must be at least 1x1x1");
  if (classes < 2) throw ConfigError("model needs at least 2 classes");

  std::vector<std::pair<std::string, Shape>> shapes;
  bool spatial = true;
  std::size_t side = input_resolution;
  std::size_t features = input_channels;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    const std::string label = layer_label(i, layer);
    switch (layer.kind) {
      case LayerKind::conv:
        if (!spatial) throw ConfigError(label + ": conv needs a spatial [b,h,w,c] input");
        if (layer.units == 0) throw ConfigError(label + ": conv needs channels > 0");
        if (layer.stride != 1 && layer.stride != 2) throw ConfigError(label + ": conv stride must be 1 or 2");
        shapes.emplace_back(param_prefix(i, layer) + "/kernel", Shape{3, 3, features, layer.units});
        shapes.emplace_back(param_prefix(i, layer) + "/bias", Shape{layer.units});
        features = layer.units;
        side = (side + static_cast<std::size_t>(layer.stride) - 1) / static_cast<std::size_t>(layer.stride);
        break;
      case LayerKind::dense:
        if (spatial) throw ConfigError(label + ": dense needs a flat input (add global_avg_pool or flatten)");
        if (layer.units == 0) throw ConfigError(label + ": dense needs width > 0");
        shapes.emplace_back(param_prefix(i, layer) + "/kernel", Shape{features, layer.units});
        shapes.emplace_back(param_prefix(i, layer) + "/bias", Shape{layer.units});
        features = layer.units;
        break;
      case LayerKind::relu:
        break;
      case LayerKind::global_avg_pool:
        if (!spatial) throw ConfigError(label + ": pooling needs a spatial input");
        spatial = false;
        break;
      case LayerKind::flatten:
        if (!spatial) throw ConfigError(label + ": flatten needs a spatial input");
        features = side * side * features;
        spatial = false;
        break;
    }
  }
  const LayerSpec& last = layers.back();
  if (last.kind != LayerKind::dense || last.units != classes) {
    throw ConfigError(layer_label(layers.size() - 1, last) + ": final layer must be dense with " +
                      std::to_string(classes) + " outputs");
  }
  return shapes;
}

template <typename T>
void Parameters<T>::add(std::string name, Tensor<T> value) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(value)});
}

template <typename T>
const NamedTensor<T>* Parameters<T>::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

template <typename T>
const Tensor<T>& Parameters<T>::at(std::string_view name) const {
  const NamedTensor<T>* e = find(name);
  if (!e) throw ConfigError("no parameter named '" + std::string(name) + "'");
  return e->value;
}

template <typename T>
Tensor<T>& Parameters<T>::at(std::string_view name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
}

template <typename T>
std::size_t Parameters<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename T>
Parameters<T> build(const ModelConfig& config, std::uint64_t seed) {
  Parameters<T> params;
  Rng rng = make_rng(seed, Stream::init);
  for (auto& [name, shape] : config.parameter_shapes()) {
    Tensor<T> t(shape);
    if (shape.size() > 1) {
      const std::size_t fan_in = element_count(shape) / shape.back();
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (T& v : t.values()) v = static_cast<T>(normal(rng));
    }
    params.add(name, std::move(t));
  }
  return params;
}

template <typename T>
void check_parameters(const ModelConfig& config, const Parameters<T>& params) {
  const auto expected = config.parameter_shapes();
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, shape] = expected[i];
    if (i >= params.size() || params[i].name != name) {
      const NamedTensor<T>* found = params.find(name);
      throw ShapeError("shape mismatch: tensor '" + name + "' " +
                       (found ? "out of order" : "missing") + ", expected " + to_string(shape));
    }
    if (params[i].value.shape() != shape) {
      throw ShapeError("shape mismatch: tensor '" + name + "' has shape " + to_string(params[i].value.shape()) +
                       ", expected " + to_string(shape));
    }
  }
  if (params.size() > expected.size()) {
    throw ShapeError("shape mismatch: unexpected tensor '" + params[expected.size()].name + "'");
  }
}

template <typename T>
std::vector<Var> bind(Tape<T>& tape, const Parameters<T>& params, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& e : params) vars.push_back(trainable ? tape.variable(e.value) : tape.constant(e.value));
  return vars;
}

template <typename T>
Var forward(Tape<T>& tape, const ModelConfig& config, std::span<const Var> params, Var input) {
  const Tensor<T>& x = tape.value(input);
  if (x.rank() != 4) throw ShapeError("forward: input must be [b,h,w,c], got " + to_string(x.shape()));
  if (x.dim(3) != config.input_channels) {
    throw ShapeError("forward: input has " + std::to_string(x.dim(3)) + " channels, model expects " +
                     std::to_string(config.input_channels));
  }
  std::size_t p = 0;
  const auto next_param = [&]() {
    if (p >= params.size()) throw ShapeError("forward: not enough parameters for config");
    return params[p++];
  };
  Var h = input;
  for (const LayerSpec& layer : config.layers) {
    switch (layer.kind) {
      case LayerKind::conv: {
        const Var kernel = next_param();
        const Var bias = next_param();
        h = tape.add_bias(tape.conv2d(h, kernel, layer.stride, Padding::same), bias);
        break;
      }
      case LayerKind::dense: {
        const Var kernel = next_param();
        const Var bias = next_param();
        h = tape.add_bias(tape.matmul(h, kernel), bias);
        break;
      }
      case LayerKind::relu: h = tape.relu(h); break;
      case LayerKind::global_avg_pool: h = tape.global_avg_pool(h); break;
      case LayerKind::flatten: h = tape.flatten(h); break;
    }
  }
  if (p != params.size()) throw ShapeError("forward: more parameters than the config uses");
  return h;
}

template <typename T>
Tensor<T> predict(const ModelConfig& config, const Parameters<T>& params, const Tensor<T>& batch) {
  Tape<T> tape(false);
  const std::vector<Var> vars = bind(tape, params, false);
  const Var input = tape.constant(batch);
  return tape.value(forward(tape, config, vars, input));
}

std::string model_config_to_json(const ModelConfig& config) {
  return json_io::model_config_to_json(config).dump();
}

ModelConfig model_config_from_json(std::string_view text) {
  json_io::json parsed;
  try {
    parsed = json_io::json::parse(text);
  } catch (const json_io::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return json_io::model_config_from_json(parsed, "model");
}

#define FUNMATCH_INSTANTIATE(T)                                                                   \
  template class Parameters<T>;                                                                   \
  template Parameters<T> build<T>(const ModelConfig&, std::uint64_t);                             \
  template void check_parameters<T>(const ModelConfig&, const Parameters<T>&);                    \
  template std::vector<Var> bind<T>(Tape<T>&, const Parameters<T>&, bool);                        \
  template Var forward<T>(Tape<T>&, const ModelConfig&, std::span<const Var>, Var);               \
  template Tensor<T> predict<T>(const ModelConfig&, const Parameters<T>&, const Tensor<T>&);

FUNMATCH_INSTANTIATE(float)
FUNMATCH_INSTANTIATE(double)

#undef FUNMATCH_INSTANTIATE

}  // namespace funmatch
