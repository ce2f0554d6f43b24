#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "funmatch/model.hpp"
#include "funmatch/schedule.hpp"
#include "funmatch/tensor.hpp"

namespace funmatch {

enum class OptimizerKind { sgd, adam, shampoo };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  ScheduleConfig schedule;
  double momentum = 0.9;
  bool nesterov = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Decoupled for sgd/adam, added to the gradient for shampoo.
  double weight_decay = 0.0;
  std::optional<double> clip_norm;
  /// Damping added to the diagonal of every Shampoo statistic.
  double shampoo_eps = 1e-6;
  /// Largest preconditioner extent.
  std::size_t block_size = 128;
  /// Recompute inverse roots every this many steps.
  std::size_t refresh_interval = 1;

  void validate() const;
};

/// Rescales grads in place by min(1, max_norm / global_norm). Returns the norm before clipping.
template <typename T>
double clip_global_norm(std::span<Tensor<T>> grads, double max_norm);

template <typename T>
double global_norm(std::span<const Tensor<T>> grads);

/// Stateful first-order or preconditioned update rule. State is allocated on
/// the first step from the parameter shapes and checked on every later step.
template <typename T>
class Optimizer {
 public:
  virtual ~Optimizer() = default;

  /// grads[i] is the gradient of params[i].
  void step(Parameters<T>& params, std::span<const Tensor<T>> grads, double lr);

  std::size_t steps() const noexcept { return steps_; }

  /// State tensors for checkpointing, named "optim/...".
  virtual std::vector<NamedTensor<float>> export_state() const = 0;
  /// Restores export_state() output for the given parameter layout.
  virtual void import_state(const Parameters<T>& params, std::span<const NamedTensor<float>> state) = 0;

 protected:
  virtual void allocate(const Parameters<T>& params) = 0;
  virtual void update(Parameters<T>& params, std::span<const Tensor<T>> grads, double lr) = 0;

  void restore_layout(const Parameters<T>& params);

  std::size_t steps_ = 0;
  std::vector<Shape> shapes_;
  std::vector<std::string> names_;
};

/// Momentum SGD: m = beta m + g; w -= lr (nesterov ? g + beta m : m).
template <typename T>
class SgdOptimizer final : public Optimizer<T> {
 public:
  explicit SgdOptimizer(const OptimConfig& config);
  std::vector<NamedTensor<float>> export_state() const override;
  void import_state(const Parameters<T>& params, std::span<const NamedTensor<float>> state) override;

 private:
  void allocate(const Parameters<T>& params) override;
  void update(Parameters<T>& params, std::span<const Tensor<T>> grads, double lr) override;

  OptimConfig config_;
  std::vector<std::vector<double>> momentum_;
};

/// Adam with bias correction.
template <typename T>
class AdamOptimizer final : public Optimizer<T> {
 public:
  explicit AdamOptimizer(const OptimConfig& config);
  std::vector<NamedTensor<float>> export_state() const override;
  void import_state(const Parameters<T>& params, std::span<const NamedTensor<float>> state) override;

 private:
  void allocate(const Parameters<T>& params) override;
  void update(Parameters<T>& params, std::span<const Tensor<T>> grads, double lr) override;

  OptimConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// One preconditioned tile of a matricized parameter.
struct ShampooBlock {
  std::size_t row_begin = 0;
  std::size_t row_end = 0;
  std::size_t col_begin = 0;
  std::size_t col_end = 0;
  /// Rank-1 parameters keep a single statistic (left) with exponent -1/2.
  bool vector = false;
  Tensor<double> left;
  Tensor<double> right;
};

/// Blocked Shampoo. Conv kernels [kh, kw, cin, cout] are matricized as
/// [kh*kw*cin, cout]; each matrix is tiled into blocks of at most block_size
/// per side. Per block: L += G G^T, R += G^T G,
/// P = (L + eps I)^(-1/4) G (R + eps I)^(-1/4).
/// Momentum is applied to P (nesterov lookahead when configured). No grafting.
template <typename T>
class ShampooOptimizer final : public Optimizer<T> {
 public:
  explicit ShampooOptimizer(const OptimConfig& config);
  ~ShampooOptimizer() override;

  std::vector<NamedTensor<float>> export_state() const override;
  void import_state(const Parameters<T>& params, std::span<const NamedTensor<float>> state) override;

  /// Snapshot of the statistics of parameter `param`, one entry per block.
  std::vector<ShampooBlock> blocks(std::size_t param) const;

 private:
  struct State;

  void allocate(const Parameters<T>& params) override;
  void update(Parameters<T>& params, std::span<const Tensor<T>> grads, double lr) override;

  OptimConfig config_;
  std::unique_ptr<State> state_;
};

template <typename T>
std::unique_ptr<Optimizer<T>> make_optimizer(const OptimConfig& config);

/// Row/column extents of the matrix Shampoo sees for a parameter shape.
std::pair<std::size_t, std::size_t> matricized_extent(const Shape& shape);

extern template class Optimizer<float>;
extern template class Optimizer<double>;
extern template class SgdOptimizer<float>;
extern template class SgdOptimizer<double>;
extern template class AdamOptimizer<float>;
extern template class AdamOptimizer<double>;
extern template class ShampooOptimizer<float>;
extern template class ShampooOptimizer<double>;

}  // namespace funmatch
