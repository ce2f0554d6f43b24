#include "funmatch/losses.hpp"

#include <cmath>
#include <string>

namespace funmatch {

namespace {

void check_temperature(double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
}

template <typename T>
void check_logits(const Tensor<T>& logits, const char* where) {
  if (logits.rank() != 2) throw ShapeError(std::string(where) + ": logits must be [b, classes], got " + to_string(logits.shape()));
  if (logits.dim(0) == 0) throw ShapeError(std::string(where) + ": empty batch");
}

template <typename T>
Tensor<T> scaled(const Tensor<T>& t, T factor) {
  Tensor<T> out = t;
  for (T& v : out.values()) v *= factor;
  return out;
}

}  // namespace

void DistillLossConfig::validate() const {
  check_temperature(temperature);
  if (!(label_weight >= 0.0 && label_weight <= 1.0)) throw ConfigError("label_weight must be in [0, 1]");
}

SoftLabels SoftLabels::hard(std::span<const std::int32_t> labels) {
  SoftLabels s;
  s.primary.assign(labels.begin(), labels.end());
  s.secondary = s.primary;
  s.lambda.assign(labels.size(), 1.0f);
  return s;
}

template <typename T>
Tensor<T> tempered_log_probs(const Tensor<T>& logits, double temperature) {
  check_temperature(temperature);
  check_logits(logits, "tempered_log_probs");
  return log_softmax(scaled(logits, static_cast<T>(1.0 / temperature)), 1);
}

template <typename T>
Tensor<T> ensemble_log_probs(std::span<const Tensor<T>> member_logits, double temperature) {
  if (member_logits.empty()) throw ConfigError("ensemble_log_probs: no members");
  if (member_logits.size() == 1) return tempered_log_probs(member_logits[0], temperature);
  Tensor<T> mean(member_logits[0].shape());
  for (const Tensor<T>& logits : member_logits) {
    if (logits.shape() != mean.shape()) {
      throw ShapeError("ensemble_log_probs: member shapes differ: " + to_string(logits.shape()) + " vs " +
                       to_string(mean.shape()));
    }
    const Tensor<T> lp = tempered_log_probs(logits, temperature);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += std::exp(lp[i]);
  }
  const T inv = T{1} / static_cast<T>(member_logits.size());
  for (T& v : mean.values()) v = std::log(v * inv);
  return mean;
}

template <typename T>
Var kl_distill_log_probs(Tape<T>& tape, Var student_logits, const Tensor<T>& teacher_log_probs, double temperature) {
  check_temperature(temperature);
  const Tensor<T>& s = tape.value(student_logits);
  check_logits(s, "kl_distill");
  if (s.shape() != teacher_log_probs.shape()) {
    throw ShapeError("kl_distill: student " + to_string(s.shape()) + " and teacher " +
                     to_string(teacher_log_probs.shape()) + " shapes differ");
  }
  // Recording ops below may reallocate the tape, so `s` must not be used past this point.
  const T batch = static_cast<T>(s.dim(0));
  Tensor<T> teacher_probs = teacher_log_probs;
  Tensor<T> teacher_log = teacher_log_probs;
  for (std::size_t i = 0; i < teacher_probs.size(); ++i) {
    teacher_probs[i] = std::exp(teacher_log_probs[i]);
    // 0 * log 0 contributes nothing; keep the product finite.
    if (teacher_probs[i] == T{0}) teacher_log[i] = T{0};
  }
  const Var student_log = tape.log_softmax(tape.scale(student_logits, static_cast<T>(1.0 / temperature)), 1);
  const Var diff = tape.add(tape.constant(std::move(teacher_log)), tape.scale(student_log, T{-1}));
  const Var weighted = tape.mul(tape.constant(std::move(teacher_probs)), diff);
  const T t2 = static_cast<T>(temperature * temperature);
  return tape.scale(tape.reduce_sum(weighted), t2 / batch);
}

template <typename T>
Var kl_distill(Tape<T>& tape, Var student_logits, Var teacher_logits, double temperature) {
  const Tensor<T>& t = tape.value(teacher_logits);
  check_logits(t, "kl_distill");
  if (t.shape() != tape.value(student_logits).shape()) {
    throw ShapeError("kl_distill: student " + to_string(tape.value(student_logits).shape()) + " and teacher " +
                     to_string(t.shape()) + " shapes differ");
  }
  return kl_distill_log_probs(tape, student_logits, tempered_log_probs(t, temperature), temperature);
}

template <typename T>
Var xent(Tape<T>& tape, Var logits, const SoftLabels& labels) {
  const Tensor<T>& l = tape.value(logits);
  check_logits(l, "xent");
  const std::size_t b = l.dim(0), k = l.dim(1);
  if (labels.size() != b || labels.secondary.size() != b || labels.lambda.size() != b) {
    throw ShapeError("xent: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
  }
  Tensor<T> targets(l.shape());
  for (std::size_t i = 0; i < b; ++i) {
    for (std::int32_t y : {labels.primary[i], labels.secondary[i]}) {
      if (y < 0 || static_cast<std::size_t>(y) >= k) {
        throw ConfigError("xent: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
      }
    }
    const T lambda = static_cast<T>(labels.lambda[i]);
    targets[i * k + static_cast<std::size_t>(labels.primary[i])] += lambda;
    targets[i * k + static_cast<std::size_t>(labels.secondary[i])] += T{1} - lambda;
  }
  const Var log_probs = tape.log_softmax(logits, 1);
  const Var picked = tape.mul(tape.constant(std::move(targets)), log_probs);
  return tape.scale(tape.reduce_sum(picked), T{-1} / static_cast<T>(b));
}

template <typename T>
Var combined(Tape<T>& tape, Var student_logits, const Tensor<T>& teacher_log_probs, const SoftLabels& labels,
             const DistillLossConfig& config) {
  config.validate();
  if (config.label_weight == 0.0) {
    return kl_distill_log_probs(tape, student_logits, teacher_log_probs, config.temperature);
  }
  if (config.label_weight == 1.0) return xent(tape, student_logits, labels);
  const T w = static_cast<T>(config.label_weight);
  const Var label_term = tape.scale(xent(tape, student_logits, labels), w);
  const Var distill_term =
      tape.scale(kl_distill_log_probs(tape, student_logits, teacher_log_probs, config.temperature), T{1} - w);
  return tape.add(label_term, distill_term);
}

#define FUNMATCH_INSTANTIATE(T)                                                                     \
  template Tensor<T> tempered_log_probs<T>(const Tensor<T>&, double);                               \
  template Tensor<T> ensemble_log_probs<T>(std::span<const Tensor<T>>, double);                     \
  template Var kl_distill_log_probs<T>(Tape<T>&, Var, const Tensor<T>&, double);                    \
  template Var kl_distill<T>(Tape<T>&, Var, Var, double);                                           \
  template Var xent<T>(Tape<T>&, Var, const SoftLabels&);                                           \
  template Var combined<T>(Tape<T>&, Var, const Tensor<T>&, const SoftLabels&, const DistillLossConfig&);

FUNMATCH_INSTANTIATE(float)
FUNMATCH_INSTANTIATE(double)

#undef FUNMATCH_INSTANTIATE

}  // namespace funmatch
