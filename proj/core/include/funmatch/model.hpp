#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "funmatch/autodiff.hpp"
#include "funmatch/tensor.hpp"

namespace funmatch {

enum class LayerKind { conv, dense, relu, global_avg_pool, flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  /// Output channels for conv, output width for dense; unused otherwise.
  std::size_t units = 0;
  /// Conv stride (1 or 2).
  int stride = 1;

  static LayerSpec conv(std::size_t channels, int stride = 1) { return {LayerKind::conv, channels, stride}; }
  static LayerSpec dense(std::size_t width) { return {LayerKind::dense, width, 1}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 1}; }
  static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool, 0, 1}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 1}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

std::string_view to_string(LayerKind kind);

/// Layer stack of a small CNN or MLP. Convs are 3x3 with same padding and a
/// bias; dense layers carry a bias. The last layer must be dense with
/// `classes` outputs.
struct ModelConfig {
  std::vector<LayerSpec> layers;
  std::size_t input_resolution = 28;
  std::size_t input_channels = 1;
  std::size_t classes = 10;

  /// 4-conv teacher with 32/64/64/128 channels.
  static ModelConfig reference_teacher(std::size_t classes, std::size_t resolution = 28, std::size_t channels = 1);
  /// 2-conv student with 16/32 channels.
  static ModelConfig reference_student(std::size_t classes, std::size_t resolution = 28, std::size_t channels = 1);

  /// Throws ConfigError naming the first layer that does not chain.
  void validate() const;

  /// Name and shape of every parameter tensor, in build order.
  std::vector<std::pair<std::string, Shape>> parameter_shapes() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered collection of named parameter tensors.
template <typename T>
class Parameters {
 public:
  Parameters() = default;

  void add(std::string name, Tensor<T> value);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const NamedTensor<T>* find(std::string_view name) const;
  const Tensor<T>& at(std::string_view name) const;
  Tensor<T>& at(std::string_view name);

  NamedTensor<T>& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const;

  template <typename U>
  Parameters<U> cast() const {
    Parameters<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;

 private:
  std::vector<NamedTensor<T>> entries_;
};

/// He-normal weights (std sqrt(2/fan_in)) and zero biases; deterministic in seed.
template <typename T>
Parameters<T> build(const ModelConfig& config, std::uint64_t seed);

/// Throws ShapeError naming the first tensor whose name or shape does not
/// match `config`.
template <typename T>
void check_parameters(const ModelConfig& config, const Parameters<T>& params);

/// Records every parameter on the tape, as variables when trainable.
template <typename T>
std::vector<Var> bind(Tape<T>& tape, const Parameters<T>& params, bool trainable);

/// Logits [b, classes] for input [b, h, w, c].
template <typename T>
Var forward(Tape<T>& tape, const ModelConfig& config, std::span<const Var> params, Var input);

/// Gradient-free forward pass.
template <typename T>
Tensor<T> predict(const ModelConfig& config, const Parameters<T>& params, const Tensor<T>& batch);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view text);

}  // namespace funmatch
