#include "funmatch/optim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include <Eigen/Core>

#include "linalg_internal.hpp"

namespace funmatch {

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::shampoo: return "shampoo";
  }
  return "?";
}

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  if (text == "shampoo") return OptimizerKind::shampoo;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected sgd, adam or shampoo)");
}

void OptimConfig::validate() const {
  schedule.validate();
  if (!(weight_decay >= 0.0)) throw ConfigError("optim: weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optim: momentum must be in [0, 1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("optim: adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("optim: adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("optim: adam_eps must be positive");
  if (clip_norm && !(*clip_norm > 0.0)) throw ConfigError("optim: clip_norm must be positive");
  if (!(shampoo_eps >= 0.0)) throw ConfigError("optim: shampoo_eps must be >= 0");
  if (block_size == 0) throw ConfigError("optim: block_size must be positive");
  if (refresh_interval == 0) throw ConfigError("optim: refresh_interval must be positive");
}

template <typename T>
double global_norm(std::span<const Tensor<T>> grads) {
  double sum = 0.0;
  for (const Tensor<T>& g : grads) {
    for (T v : g.values()) sum += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sum);
}

template <typename T>
double clip_global_norm(std::span<Tensor<T>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_global_norm: max_norm must be positive");
  const double norm = global_norm<T>(std::span<const Tensor<T>>(grads.data(), grads.size()));
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor<T>& g : grads) {
      for (T& v : g.values()) v = static_cast<T>(static_cast<double>(v) * factor);
    }
  }
  return norm;
}

std::pair<std::size_t, std::size_t> matricized_extent(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  if (shape.size() == 1) return {shape[0], 1};
  const std::size_t cols = shape.back();
  return {element_count(shape) / std::max<std::size_t>(cols, 1), cols};
}

// ---------------------------------------------------------------------------

template <typename T>
void Optimizer<T>::restore_layout(const Parameters<T>& params) {
  shapes_.clear();
  names_.clear();
  for (const auto& p : params) {
    shapes_.push_back(p.value.shape());
    names_.push_back(p.name);
  }
  allocate(params);
}

template <typename T>
void Optimizer<T>::step(Parameters<T>& params, std::span<const Tensor<T>> grads, double lr) {
  if (grads.size() != params.size()) {
    throw ShapeError("optimizer: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) +
                     " parameters");
  }
  if (shapes_.empty() && params.size() > 0) restore_layout(params);
  if (shapes_.size() != params.size()) {
    throw ShapeError("optimizer: parameter count changed from " + std::to_string(shapes_.size()) + " to " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.shape() != shapes_[i] || grads[i].shape() != shapes_[i]) {
      throw ShapeError("optimizer: shape drift for '" + names_[i] + "': state " + to_string(shapes_[i]) +
                       ", parameter " + to_string(params[i].value.shape()) + ", gradient " +
                       to_string(grads[i].shape()));
    }
  }
  update(params, grads, lr);
  ++steps_;
}

namespace {

NamedTensor<float> to_state(std::string name, const std::vector<double>& values, const Shape& shape) {
  Tensor<float> t(shape);
  for (std::size_t i = 0; i < values.size(); ++i) t[i] = static_cast<float>(values[i]);
  return {std::move(name), std::move(t)};
}

class StateLookup {
 public:
  explicit StateLookup(std::span<const NamedTensor<float>> state) {
    for (const auto& e : state) entries_[e.name] = &e.value;
  }

  const Tensor<float>& get(const std::string& name, std::size_t expected_size) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw FormatError(FormatErrorKind::malformed, "optimizer state missing '" + name + "'");
    if (it->second->size() != expected_size) {
      throw ShapeError("optimizer state '" + name + "' has " + std::to_string(it->second->size()) +
                       " elements, expected " + std::to_string(expected_size));
    }
    return *it->second;
  }

  void fill(const std::string& name, std::vector<double>& out) const {
    const Tensor<float>& t = get(name, out.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[i];
  }

  std::size_t steps() const { return static_cast<std::size_t>(get("optim/step", 1)[0]); }

 private:
  std::map<std::string, const Tensor<float>*> entries_;
};

NamedTensor<float> step_tensor(std::size_t steps) {
  return {"optim/step", Tensor<float>::scalar(static_cast<float>(steps))};
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
SgdOptimizer<T>::SgdOptimizer(const OptimConfig& config) : config_(config) {
  config_.validate();
}

template <typename T>
void SgdOptimizer<T>::allocate(const Parameters<T>& params) {
  momentum_.clear();
  for (const auto& p : params) momentum_.emplace_back(p.value.size(), 0.0);
}

template <typename T>
void SgdOptimizer<T>::update(Parameters<T>& params, std::span<const Tensor<T>> grads, double lr) {
  const double beta = config_.momentum;
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& w = params[i].value;
    std::vector<double>& m = momentum_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grads[i][j];
      m[j] = beta * m[j] + g;
      const double step = config_.nesterov ? g + beta * m[j] : m[j];
      w[j] = static_cast<T>(static_cast<double>(w[j]) * decay - lr * step);
    }
  }
}

template <typename T>
std::vector<NamedTensor<float>> SgdOptimizer<T>::export_state() const {
  std::vector<NamedTensor<float>> out{step_tensor(this->steps_)};
  for (std::size_t i = 0; i < momentum_.size(); ++i) {
    out.push_back(to_state("optim/" + this->names_[i] + "/momentum", momentum_[i], this->shapes_[i]));
  }
  return out;
}

template <typename T>
void SgdOptimizer<T>::import_state(const Parameters<T>& params, std::span<const NamedTensor<float>> state) {
  this->restore_layout(params);
  const StateLookup lookup(state);
  for (std::size_t i = 0; i < momentum_.size(); ++i) lookup.fill("optim/" + this->names_[i] + "/momentum", momentum_[i]);
  this->steps_ = lookup.steps();
}

// ---------------------------------------------------------------------------

template <typename T>
AdamOptimizer<T>::AdamOptimizer(const OptimConfig& config) : config_(config) {
  config_.validate();
}

template <typename T>
void AdamOptimizer<T>::allocate(const Parameters<T>& params) {
  m_.clear();
  v_.clear();
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

template <typename T>
void AdamOptimizer<T>::update(Parameters<T>& params, std::span<const Tensor<T>> grads, double lr) {
  const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
  const double t = static_cast<double>(this->steps_ + 1);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& w = params[i].value;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grads[i][j];
      m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g;
      v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g * g;
      const double m_hat = m_[i][j] / c1;
      const double v_hat = v_[i][j] / c2;
      w[j] = static_cast<T>(static_cast<double>(w[j]) * decay - lr * m_hat / (std::sqrt(v_hat) + config_.adam_eps));
    }
  }
}

template <typename T>
std::vector<NamedTensor<float>> AdamOptimizer<T>::export_state() const {
  std::vector<NamedTensor<float>> out{step_tensor(this->steps_)};
  for (std::size_t i = 0; i < m_.size(); ++i) {
    out.push_back(to_state("optim/" + this->names_[i] + "/m", m_[i], this->shapes_[i]));
    out.push_back(to_state("optim/" + this->names_[i] + "/v", v_[i], this->shapes_[i]));
  }
  return out;
}

template <typename T>
void AdamOptimizer<T>::import_state(const Parameters<T>& params, std::span<const NamedTensor<float>> state) {
  this->restore_layout(params);
  const StateLookup lookup(state);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    lookup.fill("optim/" + this->names_[i] + "/m", m_[i]);
    lookup.fill("optim/" + this->names_[i] + "/v", v_[i]);
  }
  this->steps_ = lookup.steps();
}

// ---------------------------------------------------------------------------

template <typename T>
struct ShampooOptimizer<T>::State {
  struct Block {
    std::size_t r0, r1, c0, c1;
    Eigen::MatrixXd left, right;
    Eigen::MatrixXd left_root, right_root;
  };
  struct Param {
    std::size_t rows = 0, cols = 0;
    bool vector = false;
    std::vector<Block> blocks;
    std::vector<double> momentum;
  };
  std::vector<Param> params;
  bool stale = true;
};

template <typename T>
ShampooOptimizer<T>::ShampooOptimizer(const OptimConfig& config) : config_(config), state_(std::make_unique<State>()) {
  config_.validate();
}

template <typename T>
ShampooOptimizer<T>::~ShampooOptimizer() = default;

template <typename T>
void ShampooOptimizer<T>::allocate(const Parameters<T>& params) {
  state_->params.clear();
  state_->stale = true;
  const std::size_t bs = config_.block_size;
  for (const auto& p : params) {
    typename State::Param ps;
    std::tie(ps.rows, ps.cols) = matricized_extent(p.value.shape());
    ps.vector = p.value.rank() <= 1;
    ps.momentum.assign(p.value.size(), 0.0);
    for (std::size_t r0 = 0; r0 < ps.rows; r0 += bs) {
      for (std::size_t c0 = 0; c0 < ps.cols; c0 += bs) {
        typename State::Block b;
        b.r0 = r0;
        b.r1 = std::min(ps.rows, r0 + bs);
        b.c0 = c0;
        b.c1 = std::min(ps.cols, c0 + bs);
        const auto nr = static_cast<Eigen::Index>(b.r1 - b.r0);
        const auto nc = static_cast<Eigen::Index>(b.c1 - b.c0);
        b.left = Eigen::MatrixXd::Zero(nr, nr);
        if (!ps.vector) b.right = Eigen::MatrixXd::Zero(nc, nc);
        ps.blocks.push_back(std::move(b));
      }
    }
    state_->params.push_back(std::move(ps));
  }
}

template <typename T>
void ShampooOptimizer<T>::update(Parameters<T>& params, std::span<const Tensor<T>> grads, double lr) {
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const bool refresh = state_->stale || this->steps_ % config_.refresh_interval == 0;
  const double beta = config_.momentum;
  const double eps = config_.shampoo_eps;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& ps = state_->params[i];
    Tensor<T>& w = params[i].value;
    const auto rows = static_cast<Eigen::Index>(ps.rows);
    const auto cols = static_cast<Eigen::Index>(ps.cols);

    RowMatrix g(rows, cols);
    for (std::size_t j = 0; j < w.size(); ++j) {
      g.data()[j] = static_cast<double>(grads[i][j]) + config_.weight_decay * static_cast<double>(w[j]);
    }

    RowMatrix precond(rows, cols);
    for (auto& b : ps.blocks) {
      const auto r0 = static_cast<Eigen::Index>(b.r0), c0 = static_cast<Eigen::Index>(b.c0);
      const auto nr = static_cast<Eigen::Index>(b.r1 - b.r0), nc = static_cast<Eigen::Index>(b.c1 - b.c0);
      const Eigen::MatrixXd gb = g.block(r0, c0, nr, nc);
      b.left.noalias() += gb * gb.transpose();
      if (ps.vector) {
        if (refresh) b.left_root = linalg::inverse_pth_root(b.left, 2, eps);
        precond.block(r0, c0, nr, nc) = b.left_root * gb;
      } else {
        b.right.noalias() += gb.transpose() * gb;
        if (refresh) {
          b.left_root = linalg::inverse_pth_root(b.left, 4, eps);
          b.right_root = linalg::inverse_pth_root(b.right, 4, eps);
        }
        precond.block(r0, c0, nr, nc) = b.left_root * gb * b.right_root;
      }
    }

    for (std::size_t j = 0; j < w.size(); ++j) {
      const double p = precond.data()[j];
      double& m = ps.momentum[j];
      m = beta * m + p;
      const double step = config_.nesterov ? beta * m + p : m;
      w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * step);
    }
  }
  state_->stale = false;
}

template <typename T>
std::vector<ShampooBlock> ShampooOptimizer<T>::blocks(std::size_t param) const {
  const auto& ps = state_->params.at(param);
  std::vector<ShampooBlock> out;
  auto to_tensor = [](const Eigen::MatrixXd& m) {
    Tensor<double> t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) t[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    }
    return t;
  };
  for (const auto& b : ps.blocks) {
    ShampooBlock sb{b.r0, b.r1, b.c0, b.c1, ps.vector, to_tensor(b.left), {}};
    if (!ps.vector) sb.right = to_tensor(b.right);
    out.push_back(std::move(sb));
  }
  return out;
}

template <typename T>
std::vector<NamedTensor<float>> ShampooOptimizer<T>::export_state() const {
  std::vector<NamedTensor<float>> out{step_tensor(this->steps_)};
  for (std::size_t i = 0; i < state_->params.size(); ++i) {
    const auto& ps = state_->params[i];
    const std::string prefix = "optim/" + this->names_[i];
    out.push_back(to_state(prefix + "/momentum", ps.momentum, this->shapes_[i]));
    for (std::size_t k = 0; k < ps.blocks.size(); ++k) {
      const auto& b = ps.blocks[k];
      auto emit = [&](const char* side, const Eigen::MatrixXd& m) {
        std::vector<double> values(m.data(), m.data() + m.size());
        out.push_back(to_state(prefix + "/block" + std::to_string(k) + "/" + side, values,
                               {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}));
      };
      emit("left", b.left);
      if (!ps.vector) emit("right", b.right);
    }
  }
  return out;
}

template <typename T>
void ShampooOptimizer<T>::import_state(const Parameters<T>& params, std::span<const NamedTensor<float>> state) {
  this->restore_layout(params);
  const StateLookup lookup(state);
  for (std::size_t i = 0; i < state_->params.size(); ++i) {
    auto& ps = state_->params[i];
    const std::string prefix = "optim/" + this->names_[i];
    lookup.fill(prefix + "/momentum", ps.momentum);
    for (std::size_t k = 0; k < ps.blocks.size(); ++k) {
      auto& b = ps.blocks[k];
      auto read = [&](const char* side, Eigen::MatrixXd& m) {
        std::vector<double> values(static_cast<std::size_t>(m.size()));
        lookup.fill(prefix + "/block" + std::to_string(k) + "/" + side, values);
        std::copy(values.begin(), values.end(), m.data());
      };
      read("left", b.left);
      if (!ps.vector) read("right", b.right);
    }
  }
  this->steps_ = lookup.steps();
  state_->stale = true;
}

// ---------------------------------------------------------------------------

template <typename T>
std::unique_ptr<Optimizer<T>> make_optimizer(const OptimConfig& config) {
  switch (config.kind) {
    case OptimizerKind::sgd: return std::make_unique<SgdOptimizer<T>>(config);
    case OptimizerKind::adam: return std::make_unique<AdamOptimizer<T>>(config);
    case OptimizerKind::shampoo: return std::make_unique<ShampooOptimizer<T>>(config);
  }
  throw ConfigError("unknown optimizer kind");
}

#define FUNMATCH_INSTANTIATE(T)                                                          \
  template double global_norm<T>(std::span<const Tensor<T>>);                          \
  template double clip_global_norm<T>(std::span<Tensor<T>>, double);                   \
  template class Optimizer<T>;                                                         \
  template class SgdOptimizer<T>;                                                      \
  template class AdamOptimizer<T>;                                                     \
  template class ShampooOptimizer<T>;                                                  \
  template std::unique_ptr<Optimizer<T>> make_optimizer<T>(const OptimConfig&);

FUNMATCH_INSTANTIATE(float)
FUNMATCH_INSTANTIATE(double)

#undef FUNMATCH_INSTANTIATE

}  // namespace funmatch
