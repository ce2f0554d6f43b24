#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "funmatch/tensor.hpp"

namespace funmatch {

enum class Padding { same, valid };

/// Handle to a node recorded on a Tape.
struct Var {
  std::uint32_t index = 0;
};

template <typename T>
class Tape;

/// Result of Tape::backward: one gradient per leaf node.
template <typename T>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor<T>> per_node) : per_node_(std::move(per_node)) {}

  /// Gradient of the loss with respect to leaf `v`; zeros when `v` does not influence the loss.
  const Tensor<T>& operator[](Var v) const { return per_node_.at(v.index); }
  Tensor<T>& operator[](Var v) { return per_node_.at(v.index); }

 private:
  std::vector<Tensor<T>> per_node_;
};

/// Reverse-mode automatic differentiation over the small op set used by the
/// models and losses. Ops append nodes in execution order; backward replays
/// them in reverse. A tape constructed with record=false evaluates values
/// only and cannot be differentiated.
///
/// Tensors are NHWC for spatial ops; conv kernels are [kh, kw, c_in, c_out].
template <typename T>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  Var variable(Tensor<T> value);
  Var constant(Tensor<T> value);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.index).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.index).requires_grad; }
  bool recording() const noexcept { return record_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  /// Number of non-leaf nodes (executed ops).
  std::size_t op_count() const noexcept { return op_count_; }

  Var matmul(Var a, Var b);
  /// 3x3 cross-correlation with stride 1 or 2.
  Var conv2d(Var x, Var kernel, int stride, Padding padding);
  /// Exact-shape elementwise sum.
  Var add(Var a, Var b);
  /// Adds a rank-1 bias along the last axis of x.
  Var add_bias(Var x, Var bias);
  /// Exact-shape elementwise product.
  Var mul(Var a, Var b);
  Var scale(Var a, T factor);
  Var relu(Var x);
  /// [b,h,w,c] -> [b,c]
  Var global_avg_pool(Var x);
  /// [b, ...] -> [b, prod(...)]
  Var flatten(Var x);
  Var log_softmax(Var x, int axis);
  Var reduce_mean(Var x);
  Var reduce_sum(Var x);

  /// Gradients of the scalar `loss` with respect to every leaf.
  Gradients<T> backward(Var loss) const;

 private:
  using GradBuffer = std::vector<Tensor<T>>;
  using BackwardFn = std::function<void(const Tape&, const Tensor<T>& grad_out, GradBuffer& grads)>;

  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    bool leaf = true;
    BackwardFn backward;
  };

  Var push_leaf(Tensor<T> value, bool requires_grad);
  Var push_op(const char* name, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn);
  static void accumulate(GradBuffer& grads, Var target, const Tensor<T>& delta);

  bool record_;
  std::size_t op_count_ = 0;
  std::vector<Node> nodes_;
};

/// Numerically stable log_softmax along `axis` (max-subtracted).
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis);

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace funmatch
