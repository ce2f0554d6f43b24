#include "funmatch/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kernels.hpp"

namespace funmatch {

namespace {

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename T>
void check_finite([[maybe_unused]] const char* op, [[maybe_unused]] const Tensor<T>& t) {
#ifdef FUNMATCH_FINITE_CHECKS
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + ": produced a non-finite value");
  }
#endif
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (int i = axis + 1; i < rank; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

kernels::ConvGeometry conv_geometry(const Shape& x, const Shape& k, int stride, Padding padding) {
  if (x.size() != 4) throw ShapeError("conv2d: input must be [b,h,w,c], got " + to_string(x));
  if (k.size() != 4) throw ShapeError("conv2d: kernel must be [kh,kw,c,co], got " + to_string(k));
  if (k[0] != 3 || k[1] != 3) {
    throw ConfigError("conv2d: unsupported kernel size " + std::to_string(k[0]) + "x" + std::to_string(k[1]) +
                      " (only 3x3)");
  }
  if (stride != 1 && stride != 2) {
    throw ConfigError("conv2d: unsupported stride " + std::to_string(stride) + " (only 1 or 2)");
  }
  if (k[2] != x[3]) {
    throw ShapeError("conv2d: input channels " + to_string(x) + " do not match kernel " + to_string(k));
  }
  kernels::ConvGeometry g;
  g.batch = x[0];
  g.height = x[1];
  g.width = x[2];
  g.channels = x[3];
  g.out_channels = k[3];
  g.stride = static_cast<std::size_t>(stride);
  const std::size_t s = g.stride;
  if (padding == Padding::same) {
    g.out_height = (g.height + s - 1) / s;
    g.out_width = (g.width + s - 1) / s;
    const auto pad_total = [&](std::size_t in, std::size_t out) {
      const std::ptrdiff_t need = static_cast<std::ptrdiff_t>((out - 1) * s + 3) - static_cast<std::ptrdiff_t>(in);
      return std::max<std::ptrdiff_t>(need, 0);
    };
    g.pad_top = g.out_height ? pad_total(g.height, g.out_height) / 2 : 0;
    g.pad_left = g.out_width ? pad_total(g.width, g.out_width) / 2 : 0;
  } else {
    if (g.height < 3 || g.width < 3) {
      throw ShapeError("conv2d: valid padding needs at least 3x3 input, got " + to_string(x));
    }
    g.out_height = (g.height - 3) / s + 1;
    g.out_width = (g.width - 3) / s + 1;
  }
  return g;
}

}  // namespace

template <typename T>
Var Tape<T>::push_leaf(Tensor<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), requires_grad, true, {}});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::variable(Tensor<T> value) {
  return push_leaf(std::move(value), true);
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  return push_leaf(std::move(value), false);
}

template <typename T>
Var Tape<T>::push_op(const char* name, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
  check_finite(name, value);
  bool needs_grad = false;
  for (Var in : inputs) needs_grad = needs_grad || nodes_.at(in.index).requires_grad;
  ++op_count_;
  Node node{std::move(value), record_ && needs_grad, false, {}};
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
void Tape<T>::accumulate(GradBuffer& grads, Var target, const Tensor<T>& delta) {
  Tensor<T>& g = grads[target.index];
  if (g.shape() != delta.shape() || g.empty()) {
    g = delta;
    return;
  }
  auto out = g.values();
  auto in = delta.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out(Shape{m, n});
  kernels::gemm(av.data(), bv.data(), out.data(), m, k, n);
  return push_op("matmul", std::move(out), {a, b},
                 [a, b, m, k, n](const Tape& tape, const Tensor<T>& g, GradBuffer& grads) {
                   const Tensor<T>& av = tape.value(a);
                   const Tensor<T>& bv = tape.value(b);
                   if (tape.requires_grad(a)) {
                     Tensor<T> da(Shape{m, k});
                     kernels::gemm_a_bt_acc(g.data(), bv.data(), da.data(), m, n, k);
                     accumulate(grads, a, da);
                   }
                   if (tape.requires_grad(b)) {
                     Tensor<T> db(Shape{k, n});
                     kernels::gemm_at_b_acc(av.data(), g.data(), db.data(), m, k, n);
                     accumulate(grads, b, db);
                   }
                 });
}

template <typename T>
Var Tape<T>::conv2d(Var x, Var kernel, int stride, Padding padding) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& kv = value(kernel);
  const kernels::ConvGeometry g = conv_geometry(xv.shape(), kv.shape(), stride, padding);
  const std::size_t rows = g.rows(), patch = g.patch_size();
  std::vector<T> cols(rows * patch);
  kernels::im2col(g, xv.data(), cols.data());
  Tensor<T> out(Shape{g.batch, g.out_height, g.out_width, g.out_channels});
  kernels::gemm(cols.data(), kv.data(), out.data(), rows, patch, g.out_channels);
  return push_op("conv2d", std::move(out), {x, kernel},
                 [x, kernel, g](const Tape& tape, const Tensor<T>& grad, GradBuffer& grads) {
                   const std::size_t rows = g.rows(), patch = g.patch_size();
                   if (tape.requires_grad(kernel)) {
                     std::vector<T> cols(rows * patch);
                     kernels::im2col(g, tape.value(x).data(), cols.data());
                     Tensor<T> dk(tape.value(kernel).shape());
                     kernels::gemm_at_b_acc(cols.data(), grad.data(), dk.data(), rows, patch, g.out_channels);
                     accumulate(grads, kernel, dk);
                   }
                   if (tape.requires_grad(x)) {
                     std::vector<T> dcols(rows * patch, T{0});
                     kernels::gemm_a_bt_acc(grad.data(), tape.value(kernel).data(), dcols.data(), rows,
                                            g.out_channels, patch);
                     Tensor<T> dx(tape.value(x).shape());
                     kernels::col2im_acc(g, dcols.data(), dx.data());
                     accumulate(grads, x, dx);
                   }
                 });
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  check_same_shape("add", av, bv);
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return push_op("add", std::move(out), {a, b}, [a, b](const Tape& tape, const Tensor<T>& g, GradBuffer& grads) {
    if (tape.requires_grad(a)) accumulate(grads, a, g);
    if (tape.requires_grad(b)) accumulate(grads, b, g);
  });
}

template <typename T>
Var Tape<T>::add_bias(Var x, Var bias) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& bv = value(bias);
  if (bv.rank() != 1 || xv.rank() == 0 || xv.shape().back() != bv.dim(0)) {
    throw ShapeError("add_bias: bias " + to_string(bv.shape()) + " does not match last axis of " +
                     to_string(xv.shape()));
  }
  const std::size_t c = bv.dim(0);
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
  return push_op("add_bias", std::move(out), {x, bias},
                 [x, bias, c](const Tape& tape, const Tensor<T>& g, GradBuffer& grads) {
                   if (tape.requires_grad(x)) accumulate(grads, x, g);
                   if (tape.requires_grad(bias)) {
                     Tensor<T> db(Shape{c});
                     for (std::size_t i = 0; i < g.size(); ++i) db[i % c] += g[i];
                     accumulate(grads, bias, db);
                   }
                 });
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  check_same_shape("mul", av, bv);
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push_op("mul", std::move(out), {a, b}, [a, b](const Tape& tape, const Tensor<T>& g, GradBuffer& grads) {
    if (tape.requires_grad(a)) {
      Tensor<T> da = g;
      const Tensor<T>& bv = tape.value(b);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= bv[i];
      accumulate(grads, a, da);
    }
    if (tape.requires_grad(b)) {
      Tensor<T> db = g;
      const Tensor<T>& av = tape.value(a);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] *= av[i];
      accumulate(grads, b, db);
    }
  });
}

template <typename T>
Var Tape<T>::scale(Var a, T factor) {
  Tensor<T> out = value(a);
  for (T& v : out.values()) v *= factor;
  return push_op("scale", std::move(out), {a}, [a, factor](const Tape&, const Tensor<T>& g, GradBuffer& grads) {
    Tensor<T> da = g;
    for (T& v : da.values()) v *= factor;
    accumulate(grads, a, da);
  });
}

template <typename T>
Var Tape<T>::relu(Var x) {
  Tensor<T> out = value(x);
  for (T& v : out.values()) v = v > T{0} ? v : T{0};
  return push_op("relu", std::move(out), {x}, [x](const Tape& tape, const Tensor<T>& g, GradBuffer& grads) {
    Tensor<T> dx = g;
    const Tensor<T>& xv = tape.value(x);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(xv[i] > T{0})) dx[i] = T{0};
    }
    accumulate(grads, x, dx);
  });
}

template <typename T>
Var Tape<T>::global_avg_pool(Var x) {
  const Tensor<T>& xv = value(x);
  if (xv.rank() != 4) throw ShapeError("global_avg_pool: expected [b,h,w,c], got " + to_string(xv.shape()));
  const std::size_t b = xv.dim(0), hw = xv.dim(1) * xv.dim(2), c = xv.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent " + to_string(xv.shape()));
  Tensor<T> out(Shape{b, c});
  const T inv = T{1} / static_cast<T>(hw);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      const T* src = xv.data() + (n * hw + p) * c;
      for (std::size_t ch = 0; ch < c; ++ch) out[n * c + ch] += src[ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) out[n * c + ch] *= inv;
  }
  return push_op("global_avg_pool", std::move(out), {x},
                 [x, b, hw, c, inv](const Tape& tape, const Tensor<T>& g, GradBuffer& grads) {
                   Tensor<T> dx(tape.value(x).shape());
                   for (std::size_t n = 0; n < b; ++n) {
                     for (std::size_t p = 0; p < hw; ++p) {
                       T* dst = dx.data() + (n * hw + p) * c;
                       for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = g[n * c + ch] * inv;
                     }
                   }
                   accumulate(grads, x, dx);
                 });
}

template <typename T>
Var Tape<T>::flatten(Var x) {
  const Tensor<T>& xv = value(x);
  if (xv.rank() < 1) throw ShapeError("flatten: needs a batch axis");
  const std::size_t b = xv.dim(0);
  const std::size_t rest = b ? xv.size() / b : element_count(Shape(xv.shape().begin() + 1, xv.shape().end()));
  Tensor<T> out = xv.reshaped(Shape{b, rest});
  return push_op("flatten", std::move(out), {x}, [x](const Tape& tape, const Tensor<T>& g, GradBuffer& grads) {
    accumulate(grads, x, g.reshaped(tape.value(x).shape()));
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& xv, int axis) {
  const AxisSplit s = split_axis(xv.shape(), axis);
  Tensor<T> out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T max_v = -std::numeric_limits<T>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) max_v = std::max(max_v, xv[base + e * s.inner]);
      T sum = 0;
      for (std::size_t e = 0; e < s.extent; ++e) sum += std::exp(xv[base + e * s.inner] - max_v);
      const T log_sum = std::log(sum) + max_v;
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] = xv[base + e * s.inner] - log_sum;
    }
  }
  return out;
}

template Tensor<float> log_softmax(const Tensor<float>&, int);
template Tensor<double> log_softmax(const Tensor<double>&, int);

template <typename T>
Var Tape<T>::log_softmax(Var x, int axis) {
  const AxisSplit s = split_axis(value(x).shape(), axis);
  Tensor<T> out = funmatch::log_softmax(value(x), axis);
  const Var self{static_cast<std::uint32_t>(nodes_.size())};
  return push_op("log_softmax", std::move(out), {x}, [x, s, self](const Tape& tape, const Tensor<T>& g, GradBuffer& grads) {
    // d/dx_j = g_j - softmax_j * sum_e g_e
    const Tensor<T>& y = tape.value(self);
    Tensor<T> dx(y.shape());
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        T gsum = 0;
        for (std::size_t e = 0; e < s.extent; ++e) gsum += g[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t idx = base + e * s.inner;
          dx[idx] = g[idx] - std::exp(y[idx]) * gsum;
        }
      }
    }
    accumulate(grads, x, dx);
  });
}

template <typename T>
Var Tape<T>::reduce_sum(Var x) {
  const Tensor<T>& xv = value(x);
  T sum = 0;
  for (T v : xv.values()) sum += v;
  return push_op("reduce_sum", Tensor<T>::scalar(sum), {x},
                 [x](const Tape& tape, const Tensor<T>& g, GradBuffer& grads) {
                   accumulate(grads, x, Tensor<T>::filled(tape.value(x).shape(), g.item()));
                 });
}

template <typename T>
Var Tape<T>::reduce_mean(Var x) {
  const Tensor<T>& xv = value(x);
  if (xv.empty()) throw ShapeError("reduce_mean: empty tensor " + to_string(xv.shape()));
  T sum = 0;
  for (T v : xv.values()) sum += v;
  const T n = static_cast<T>(xv.size());
  return push_op("reduce_mean", Tensor<T>::scalar(sum / n), {x},
                 [x, n](const Tape& tape, const Tensor<T>& g, GradBuffer& grads) {
                   accumulate(grads, x, Tensor<T>::filled(tape.value(x).shape(), g.item() / n));
                 });
}

template <typename T>
Gradients<T> Tape<T>::backward(Var loss) const {
  if (!record_) throw ConfigError("backward: tape was not recording");
  const Tensor<T>& lv = value(loss);
  if (lv.size() != 1 || lv.rank() != 0) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(lv.shape()));
  }
  GradBuffer grads(nodes_.size(), Tensor<T>(Shape{0}));
  grads[loss.index] = Tensor<T>::scalar(T{1});
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (node.leaf || !node.backward || grads[i].empty()) continue;
    node.backward(*this, grads[i], grads);
    grads[i] = Tensor<T>(Shape{0});
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].leaf) {
      if (grads[i].shape() != nodes_[i].value.shape()) grads[i] = Tensor<T>(nodes_[i].value.shape());
    } else if (i != loss.index) {
      grads[i] = Tensor<T>(Shape{0});
    }
  }
  return Gradients<T>(std::move(grads));
}

template class Tape<float>;
template class Tape<double>;

}  // namespace funmatch
