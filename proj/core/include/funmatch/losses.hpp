#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "funmatch/autodiff.hpp"

namespace funmatch {

struct DistillLossConfig {
  double temperature = 1.0;
  /// Weight of the label cross-entropy; 0 is pure distillation.
  double label_weight = 0.0;

  void validate() const;
};

/// Per-example mixture of two hard labels: lambda * onehot(primary) + (1 - lambda) * onehot(secondary).
struct SoftLabels {
  std::vector<std::int32_t> primary;
  std::vector<std::int32_t> secondary;
  std::vector<float> lambda;

  static SoftLabels hard(std::span<const std::int32_t> labels);
  std::size_t size() const noexcept { return primary.size(); }
};

/// Row-wise log_softmax(logits / temperature) of a [b, classes] tensor, using
/// the same arithmetic as the tape ops so equal inputs give equal outputs.
template <typename T>
Tensor<T> tempered_log_probs(const Tensor<T>& logits, double temperature);

/// log of the mean of the members' tempered softmax outputs. A single member
/// returns tempered_log_probs unchanged.
template <typename T>
Tensor<T> ensemble_log_probs(std::span<const Tensor<T>> member_logits, double temperature);

/// T^2 * mean_b sum_c p_t (log p_t - log p_s) with p = softmax(logits / T).
/// Teacher logits are read as constants; no gradient reaches them.
template <typename T>
Var kl_distill(Tape<T>& tape, Var student_logits, Var teacher_logits, double temperature);

/// Same objective with the teacher given directly as tempered log-probabilities.
template <typename T>
Var kl_distill_log_probs(Tape<T>& tape, Var student_logits, const Tensor<T>& teacher_log_probs, double temperature);

/// Mean negative log-likelihood of (soft) labels under softmax(logits).
template <typename T>
Var xent(Tape<T>& tape, Var logits, const SoftLabels& labels);

template <typename T>
Var xent(Tape<T>& tape, Var logits, std::span<const std::int32_t> labels) {
  return xent(tape, logits, SoftLabels::hard(labels));
}

/// w * xent + (1 - w) * kl_distill; w = 0 and w = 1 return the single term unchanged.
template <typename T>
Var combined(Tape<T>& tape, Var student_logits, const Tensor<T>& teacher_log_probs, const SoftLabels& labels,
             const DistillLossConfig& config);

}  // namespace funmatch
