#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "funmatch/augment.hpp"
#include "funmatch/data.hpp"
#include "funmatch/losses.hpp"
#include "funmatch/model.hpp"
#include "funmatch/optim.hpp"

namespace funmatch {

/// Base splits "train", "validation" and "test" generated procedurally.
struct SyntheticSource {
  std::uint64_t seed = 1234;
  std::size_t train_size = 3000;
  std::size_t validation_size = 600;
  std::size_t test_size = 600;
  std::size_t classes = 3;
  std::size_t resolution = 28;
  SyntheticOptions options;
};

struct IdxFiles {
  std::string images;
  std::string labels;
};

enum class DataSource { synthetic, idx };

struct DatasetConfig {
  DataSource source = DataSource::synthetic;
  SyntheticSource synthetic;
  /// Base split name -> IDX file pair.
  std::map<std::string, IdxFiles> idx;
  std::size_t idx_classes = 10;
  /// Role tag (train, minival, val, test) -> split spec such as "train[:90%]".
  std::map<std::string, std::string> splits;
};

struct TeacherRef {
  std::string checkpoint;
  std::size_t resolution = 28;
};

/// Augmentation for supervised (label) training.
struct SupervisedAugment {
  bool random_crop = false;
  /// Mixup on inputs and labels.
  bool mixup = false;
};

struct SweepConfig {
  std::vector<double> lr;
  std::vector<double> weight_decay;
  std::vector<double> temperature;
  /// Epoch budgets; empty means the run's own epochs.
  std::vector<std::size_t> epochs;
  /// Split tag used to pick the best run: "val" or "minival".
  std::string selection = "val";
};

struct RunConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  /// Network being trained: the teacher for train-teacher, the student for distill.
  ModelConfig model;
  /// Optional checkpoint to initialize the trained network from.
  std::optional<std::string> init_checkpoint;
  std::vector<TeacherRef> teachers;
  ConsistencyMode consistency = ConsistencyMode::function_matching;
  AugmentConfig augment;
  DistillLossConfig loss;
  OptimConfig optim;
  /// Replace optim.schedule.warmup_steps by min(1800, total / 10) once the step count is known.
  bool warmup_auto = true;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  /// Evaluate every this many steps; 0 evaluates at the end of the run only.
  std::size_t eval_interval = 0;
  /// Save a checkpoint every this many steps; 0 saves the final one only.
  std::size_t checkpoint_interval = 0;
  /// Training stops at the next step boundary after this many seconds; 0 disables.
  double max_wall_s = 0.0;
  /// When false the wall_s column is written as 0 so metrics files are reproducible bitwise.
  bool log_wall_time = true;
  SupervisedAugment supervised;
  /// Split tags evaluated at each eval; empty means every configured tag.
  std::vector<std::string> eval_splits;
  std::optional<SweepConfig> sweep;
  std::vector<std::size_t> patience_epochs;

  /// Throws ConfigError for inconsistent values (overlapping splits, bad grids, ...).
  void validate() const;
};

/// Parses a RunConfig from UTF-8 JSON. Unknown keys are errors.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

/// Names of the split tags in canonical order (train, minival, val, test).
const std::vector<std::string>& split_tags();

/// The datasets named by config.dataset.splits, keyed by tag.
std::map<std::string, Dataset> load_splits(const DatasetConfig& config);

}  // namespace funmatch
