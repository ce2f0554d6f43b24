#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "funmatch/checkpoint.hpp"
#include "funmatch/data.hpp"
#include "funmatch/metrics.hpp"
#include "funmatch/run_config.hpp"

namespace funmatch {

struct RunOptions {
  std::filesystem::path out_dir = "runs";
  /// Values above 1 enable the data prefetch worker (and parallel sweep children).
  std::size_t threads = 1;
  /// Continue from the latest checkpoint in the run directory.
  bool resume = false;
};

struct Teacher {
  ModelConfig config;
  Parameters<float> params;
  /// Input resolution this member sees.
  std::size_t resolution = 28;
};

/// One or more frozen teachers whose tempered softmax outputs are averaged.
class TeacherEnsemble {
 public:
  TeacherEnsemble() = default;
  explicit TeacherEnsemble(std::vector<Teacher> members);
  static TeacherEnsemble load(std::span<const TeacherRef> refs);

  bool empty() const noexcept { return members_.empty(); }
  std::size_t size() const noexcept { return members_.size(); }
  std::size_t classes() const;
  const std::vector<Teacher>& members() const noexcept { return members_; }

  /// Per-member logits; `view` is resized to each member's resolution when it differs.
  std::vector<Tensor<float>> member_logits(const Tensor<float>& view) const;
  /// log of the mean tempered probabilities (the member's own tempered log-probs for one member).
  Tensor<float> log_probs(const Tensor<float>& view, double temperature) const;

  /// Batch forward passes per member since construction.
  std::size_t forward_passes() const noexcept { return forward_passes_; }
  /// FNV-1a over every parameter byte of every member.
  std::uint64_t checksum() const;

 private:
  std::vector<Teacher> members_;
  mutable std::size_t forward_passes_ = 0;
};

/// Index of the largest entry of each row, the lowest index on ties.
std::vector<std::size_t> argmax_rows(const Tensor<float>& logits);

/// Fraction of rows whose argmaxes agree.
double agreement(std::span<const std::size_t> a, std::span<const std::size_t> b);

struct EvalOptions {
  std::size_t resolution = 28;
  double central_crop_area = 0.875;
  std::size_t batch_size = 256;
};

/// Deterministic evaluation input: central crop covering central_crop_area,
/// resized to `resolution`.
Tensor<float> eval_view(const Dataset& ds, std::span<const std::size_t> indices, double central_crop_area,
                        std::size_t resolution);

struct EvalResult {
  /// Mean label cross-entropy.
  double loss = 0.0;
  double top1 = 0.0;
  std::optional<double> agreement;
  std::size_t count = 0;
};

/// Teacher predictions on the central-crop views of a dataset (ensemble
/// argmax at temperature 1), each member at its own resolution.
std::vector<std::size_t> teacher_predictions(const TeacherEnsemble& teacher, const Dataset& ds,
                                             double central_crop_area, std::size_t view_resolution);

EvalResult evaluate(const ModelConfig& config, const Parameters<float>& params, const Dataset& ds,
                    const EvalOptions& options, const std::vector<std::size_t>* teacher_argmax = nullptr);

struct RunResult {
  std::filesystem::path run_dir;
  RunConfig resolved;
  Checkpoint checkpoint;
  std::size_t steps = 0;
  std::size_t total_steps = 0;
  /// Teacher batch forward passes made by training steps (excludes evaluation and caching).
  std::size_t teacher_train_forward_passes = 0;
  std::uint64_t teacher_checksum_before = 0;
  std::uint64_t teacher_checksum_after = 0;
  bool stopped_by_wall_clock = false;
  std::map<std::string, EvalResult> final_eval;
};

/// Supervised training of config.model with label cross-entropy.
RunResult train_teacher(const RunConfig& config, const RunOptions& options);

/// Distills config.teachers into config.model under config.consistency.
RunResult distill(const RunConfig& config, const RunOptions& options);

/// distill when teachers are configured, train_teacher otherwise.
RunResult run(const RunConfig& config, const RunOptions& options);

/// Evaluates a checkpoint on the configured eval splits at its own input resolution.
std::map<std::string, EvalResult> evaluate_checkpoint(const RunConfig& config, const std::filesystem::path& checkpoint);

/// Records which split tags were read while choosing a winner.
class SplitAudit {
 public:
  void record(const std::string& split) { reads_.insert(split); }
  const std::set<std::string>& reads() const noexcept { return reads_; }

 private:
  std::set<std::string> reads_;
};

/// Last row of `split` in `rows`, recorded in `audit`.
std::optional<MetricsRow> final_row(const std::vector<MetricsRow>& rows, const std::string& split, SplitAudit& audit);

struct SweepPoint {
  std::size_t epochs = 0;
  double temperature = 1.0;
  double lr = 0.0;
  double weight_decay = 0.0;
  std::string run_id;
  /// Empty on success, otherwise the error message.
  std::string error;
  std::optional<double> selection_top1;
  std::optional<double> test_top1;
};

struct SweepResult {
  std::filesystem::path sweep_dir;
  std::string selection_split;
  std::vector<SweepPoint> points;
  /// Epoch budget -> index of the winning point.
  std::map<std::size_t, std::size_t> best;
  /// Splits read by the selection step.
  SplitAudit audit;
};

/// Runs the full lr x weight_decay x temperature (x epochs) grid and picks
/// the best point per epoch budget by final selection-split accuracy.
/// Child failures are recorded and the sweep continues.
SweepResult sweep(const RunConfig& base, const RunOptions& options);

/// Picks, per budget, the index with the best selection accuracy (first in grid order on ties).
std::map<std::size_t, std::size_t> select_best(const std::vector<SweepPoint>& points);

struct PatienceRow {
  std::size_t epochs = 0;
  std::string run_id;
  double temperature = 1.0;
  double lr = 0.0;
  double weight_decay = 0.0;
  std::optional<double> val_top1;
  double test_top1 = 0.0;
};

/// One run (or one sweep, when base.sweep is set) per budget in base.patience_epochs.
std::vector<PatienceRow> patience_experiment(const RunConfig& base, const RunOptions& options);

/// Final row per (run, split) of every metrics.csv under out_dir, written to out_dir/summary.csv.
std::string report_csv(const std::filesystem::path& out_dir);

}  // namespace funmatch
