#include "funmatch/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <regex>

#include "funmatch/augment.hpp"
#include "funmatch/losses.hpp"
#include "funmatch/optim.hpp"
#include "funmatch/rng.hpp"
#include "funmatch/schedule.hpp"
#include "funmatch/split.hpp"
#include "prefetch.hpp"

namespace funmatch {

namespace {

bool has_flatten(const ModelConfig& config) {
  return std::any_of(config.layers.begin(), config.layers.end(),
                     [](const LayerSpec& l) { return l.kind == LayerKind::flatten; });
}

void check_resolution(const ModelConfig& config, std::size_t resolution, const std::string& who) {
  if (has_flatten(config) && resolution != config.input_resolution) {
    throw ConfigError(who + ": model flattens its input and needs resolution " +
                      std::to_string(config.input_resolution) + ", got " + std::to_string(resolution));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Teachers

TeacherEnsemble::TeacherEnsemble(std::vector<Teacher> members) : members_(std::move(members)) {
  for (const Teacher& t : members_) {
    check_parameters(t.config, t.params);
    check_resolution(t.config, t.resolution, "teacher");
    if (t.config.classes != members_.front().config.classes) {
      throw ConfigError("teachers disagree on class count: " + std::to_string(t.config.classes) + " vs " +
                        std::to_string(members_.front().config.classes));
    }
  }
}

TeacherEnsemble TeacherEnsemble::load(std::span<const TeacherRef> refs) {
  std::vector<Teacher> members;
  for (const TeacherRef& ref : refs) {
    Checkpoint ckpt = load_checkpoint(ref.checkpoint);
    members.push_back({std::move(ckpt.config), std::move(ckpt.params), ref.resolution});
  }
  return TeacherEnsemble(std::move(members));
}

std::size_t TeacherEnsemble::classes() const {
  if (members_.empty()) throw ConfigError("empty teacher ensemble");
  return members_.front().config.classes;
}

std::vector<Tensor<float>> TeacherEnsemble::member_logits(const Tensor<float>& view) const {
  std::vector<Tensor<float>> out;
  out.reserve(members_.size());
  for (const Teacher& t : members_) {
    ++forward_passes_;
    if (view.dim(1) == t.resolution && view.dim(2) == t.resolution) {
      out.push_back(predict(t.config, t.params, view));
    } else {
      out.push_back(predict(t.config, t.params, resize_batch(view, t.resolution)));
    }
  }
  return out;
}

Tensor<float> TeacherEnsemble::log_probs(const Tensor<float>& view, double temperature) const {
  const std::vector<Tensor<float>> logits = member_logits(view);
  return ensemble_log_probs<float>(logits, temperature);
}

std::uint64_t TeacherEnsemble::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const Teacher& t : members_) {
    for (const auto& p : t.params) {
      for (char c : p.name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
      }
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
      for (std::size_t i = 0; i < p.value.size() * sizeof(float); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<std::size_t> argmax_rows(const Tensor<float>& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [b, classes], got " + to_string(logits.shape()));
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> out(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    const float* row = logits.data() + i * k;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

double agreement(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) {
    throw ShapeError("agreement: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " predictions");
  }
  if (a.empty()) return 0.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(a.size());
}

Tensor<float> eval_view(const Dataset& ds, std::span<const std::size_t> indices, double central_crop_area,
                        std::size_t resolution) {
  const Tensor<float> images = images_to_tensor(ds, indices);
  const std::vector<CropParams> crops(indices.size(), central_crop(ds.height, ds.width, central_crop_area));
  return crop_batch(images, crops, resolution);
}

namespace {

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  for (std::size_t i = begin; i < end; ++i) out[i - begin] = i;
  return out;
}

}  // namespace

std::vector<std::size_t> teacher_predictions(const TeacherEnsemble& teacher, const Dataset& ds,
                                             double central_crop_area, std::size_t view_resolution) {
  std::vector<std::size_t> out;
  out.reserve(ds.size());
  constexpr std::size_t chunk = 256;
  for (std::size_t begin = 0; begin < ds.size(); begin += chunk) {
    const auto idx = iota_range(begin, std::min(ds.size(), begin + chunk));
    const Tensor<float> view = eval_view(ds, idx, central_crop_area, view_resolution);
    std::vector<Tensor<float>> logits = teacher.member_logits(view);
    const std::vector<std::size_t> pred =
        logits.size() == 1 ? argmax_rows(logits[0]) : argmax_rows(ensemble_log_probs<float>(logits, 1.0));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

EvalResult evaluate(const ModelConfig& config, const Parameters<float>& params, const Dataset& ds,
                    const EvalOptions& options, const std::vector<std::size_t>* teacher_argmax) {
  if (teacher_argmax && teacher_argmax->size() != ds.size()) {
    throw ShapeError("evaluate: " + std::to_string(teacher_argmax->size()) + " teacher predictions for " +
                     std::to_string(ds.size()) + " examples");
  }
  EvalResult result;
  result.count = ds.size();
  if (ds.size() == 0) return result;
  double loss = 0.0;
  std::size_t correct = 0, agree = 0;
  const std::size_t chunk = std::max<std::size_t>(options.batch_size, 1);
  for (std::size_t begin = 0; begin < ds.size(); begin += chunk) {
    const auto idx = iota_range(begin, std::min(ds.size(), begin + chunk));
    const Tensor<float> logits =
        predict(config, params, eval_view(ds, idx, options.central_crop_area, options.resolution));
    const Tensor<float> lp = log_softmax(logits, 1);
    const std::vector<std::size_t> pred = argmax_rows(logits);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto label = static_cast<std::size_t>(ds.labels[idx[i]]);
      loss -= lp[i * k + label];
      correct += pred[i] == label ? 1 : 0;
      if (teacher_argmax) agree += pred[i] == (*teacher_argmax)[idx[i]] ? 1 : 0;
    }
  }
  const auto n = static_cast<double>(ds.size());
  result.loss = loss / n;
  result.top1 = static_cast<double>(correct) / n;
  if (teacher_argmax) result.agreement = static_cast<double>(agree) / n;
  return result;
}

// ---------------------------------------------------------------------------
// Training

namespace {

enum class Task { supervised, distill };

struct Prepared {
  Batch batch;
  Tensor<float> input;
  Tensor<float> teacher_view;
  SoftLabels labels;
};

Prepared prepare_step(const RunConfig& cfg, Task task, const Dataset& train, std::size_t step, std::size_t per_epoch) {
  const std::size_t epoch = step / per_epoch;
  const std::size_t index = step % per_epoch;
  Prepared p;
  p.batch = EpochBatches(train, cfg.batch_size, cfg.seed, epoch).batch(index);
  Rng rng = make_rng(cfg.seed, Stream::views, {epoch, index});
  const std::size_t b = p.batch.labels.size();

  if (task == Task::distill) {
    ViewPair views = make_views(p.batch.images, cfg.consistency, cfg.augment, rng);
    p.labels.primary = p.batch.labels;
    p.labels.secondary.resize(b);
    for (std::size_t i = 0; i < b; ++i) p.labels.secondary[i] = p.batch.labels[views.partner[i]];
    p.labels.lambda = views.lambda;
    p.input = std::move(views.student);
    if (cfg.consistency != ConsistencyMode::fixed_teacher) p.teacher_view = std::move(views.teacher);
    return p;
  }

  const std::size_t res = cfg.model.input_resolution;
  if (cfg.supervised.random_crop) {
    std::vector<CropParams> crops(b);
    for (auto& c : crops) c = sample_crop(train.height, train.width, cfg.augment, rng);
    p.input = crop_batch(p.batch.images, crops, res);
  } else if (train.height != res || train.width != res) {
    p.input = resize_batch(p.batch.images, res);
  } else {
    p.input = p.batch.images;
  }
  if (cfg.supervised.mixup) {
    const MixupDraw draw = draw_mixup(b, cfg.augment.mixup_alpha, rng);
    p.input = apply_mixup(p.input, draw);
    p.labels.primary = p.batch.labels;
    p.labels.secondary.resize(b);
    for (std::size_t i = 0; i < b; ++i) p.labels.secondary[i] = p.batch.labels[draw.partner[i]];
    p.labels.lambda = draw.lambda;
  } else {
    p.labels = SoftLabels::hard(p.batch.labels);
  }
  return p;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t step) {
  return dir / ("ckpt_" + std::to_string(step) + ".fmck");
}

std::optional<std::size_t> latest_checkpoint(const std::filesystem::path& dir) {
  static const std::regex pattern(R"(ckpt_(\d+)\.fmck)");
  std::optional<std::size_t> best;
  if (!std::filesystem::is_directory(dir)) return best;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) {
      const std::size_t step = std::stoull(m[1].str());
      if (!best || step > *best) best = step;
    }
  }
  return best;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

RunResult run_training(const RunConfig& config, const RunOptions& options, Task task) {
  config.validate();
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - started).count(); };

  std::map<std::string, Dataset> splits = load_splits(config.dataset);
  const Dataset& train = splits.at("train");
  if (train.size() == 0) throw ConfigError("train split '" + config.dataset.splits.at("train") + "' is empty");
  if (train.classes != config.model.classes) {
    throw ConfigError("model has " + std::to_string(config.model.classes) + " classes, dataset has " +
                      std::to_string(train.classes));
  }

  RunResult result;
  result.resolved = config;
  RunConfig& cfg = result.resolved;

  TeacherEnsemble teacher;
  if (task == Task::distill) {
    if (cfg.teachers.empty()) throw ConfigError("distill: teachers must list at least one checkpoint");
    teacher = TeacherEnsemble::load(cfg.teachers);
    if (teacher.classes() != cfg.model.classes) {
      throw ConfigError("teacher has " + std::to_string(teacher.classes()) + " classes, student has " +
                        std::to_string(cfg.model.classes));
    }
    result.teacher_checksum_before = teacher.checksum();
  }
  const std::size_t model_res =
      task == Task::distill ? cfg.augment.student_resolution : cfg.model.input_resolution;
  check_resolution(cfg.model, model_res, "model");

  const std::size_t per_epoch = batches_per_epoch(train.size(), cfg.batch_size);
  const std::size_t total = cfg.epochs * per_epoch;
  result.total_steps = total;
  if (total > 0) {
    cfg.optim.schedule.total_steps = total;
    if (cfg.warmup_auto) cfg.optim.schedule.warmup_steps = scaled_warmup(total);
    cfg.optim.validate();
  }
  cfg.warmup_auto = false;

  std::vector<std::string> eval_tags = cfg.eval_splits;
  if (eval_tags.empty()) {
    for (const std::string& tag : split_tags()) {
      if (cfg.dataset.splits.contains(tag)) eval_tags.push_back(tag);
    }
  }

  const std::filesystem::path run_dir = options.out_dir / cfg.run_id;
  result.run_dir = run_dir;
  std::filesystem::create_directories(run_dir);
  write_text(run_dir / "config.json", run_config_to_json(cfg));

  Parameters<float> params;
  if (cfg.init_checkpoint) {
    Checkpoint init = load_checkpoint(*cfg.init_checkpoint);
    check_parameters(cfg.model, init.params);
    params = std::move(init.params);
  } else {
    params = build<float>(cfg.model, cfg.seed);
  }

  std::unique_ptr<Optimizer<float>> optimizer;
  if (total > 0) optimizer = make_optimizer<float>(cfg.optim);

  std::size_t start = 0;
  const auto metrics_path = run_dir / "metrics.csv";
  bool append = false;
  if (options.resume) {
    if (const auto step = latest_checkpoint(run_dir)) {
      Checkpoint ckpt = load_checkpoint(checkpoint_path(run_dir, *step));
      check_parameters(cfg.model, ckpt.params);
      params = std::move(ckpt.params);
      if (optimizer && *step > 0) optimizer->import_state(params, ckpt.extra);
      start = *step;
      if (std::filesystem::exists(metrics_path)) {
        truncate_metrics(metrics_path, start);
        append = true;
      }
    }
  }
  MetricsWriter metrics(metrics_path, append);

  std::map<std::string, std::vector<std::size_t>> teacher_argmax;
  if (task == Task::distill) {
    for (const std::string& tag : eval_tags) {
      teacher_argmax[tag] =
          teacher_predictions(teacher, splits.at(tag), cfg.augment.central_crop_area, cfg.augment.teacher_resolution);
    }
  }

  // The fixed teacher sees one deterministic view per example, so its outputs are computed once.
  Tensor<float> fixed_cache;
  if (task == Task::distill && cfg.consistency == ConsistencyMode::fixed_teacher && total > start) {
    const std::size_t k = cfg.model.classes;
    fixed_cache = Tensor<float>({train.size(), k});
    constexpr std::size_t chunk = 256;
    for (std::size_t begin = 0; begin < train.size(); begin += chunk) {
      const auto idx = iota_range(begin, std::min(train.size(), begin + chunk));
      const Tensor<float> lp = teacher.log_probs(
          eval_view(train, idx, cfg.augment.central_crop_area, cfg.augment.teacher_resolution), cfg.loss.temperature);
      std::copy(lp.values().begin(), lp.values().end(), fixed_cache.data() + begin * k);
    }
  }

  const auto checkpoint_now = [&](std::size_t step) {
    Checkpoint ckpt;
    ckpt.config = cfg.model;
    ckpt.params = params;
    ckpt.step = step;
    ckpt.seed = cfg.seed;
    if (optimizer) ckpt.extra = optimizer->export_state();
    save_checkpoint(ckpt, checkpoint_path(run_dir, step));
    return ckpt;
  };

  double objective_sum = 0.0;
  std::size_t objective_count = 0;
  double last_lr = total > 0 ? lr_at(std::min(start, total), cfg.optim.schedule) : 0.0;
  std::size_t last_eval = std::numeric_limits<std::size_t>::max();

  const auto evaluate_now = [&](std::size_t step) {
    const double epoch = static_cast<double>(step) / static_cast<double>(per_epoch);
    const double wall = cfg.log_wall_time ? elapsed() : 0.0;
    for (const std::string& tag : eval_tags) {
      const Dataset& ds = splits.at(tag);
      if (ds.size() == 0) continue;
      const auto it = teacher_argmax.find(tag);
      const EvalResult r = evaluate(cfg.model, params, ds, {model_res, cfg.augment.central_crop_area, 256},
                                    it == teacher_argmax.end() ? nullptr : &it->second);
      MetricsRow row;
      row.step = step;
      row.epoch = epoch;
      row.split = tag;
      // Train rows carry the training objective averaged since the previous evaluation.
      row.loss = tag == "train" && objective_count > 0 ? objective_sum / static_cast<double>(objective_count) : r.loss;
      row.top1 = r.top1;
      row.agreement = r.agreement;
      row.lr = last_lr;
      row.wall_s = wall;
      metrics.write(row);
      result.final_eval[tag] = r;
    }
    objective_sum = 0.0;
    objective_count = 0;
    last_eval = step;
  };

  const bool threaded = options.threads > 1;
  std::optional<Prefetcher<Prepared>> source;
  source.emplace(
      start, total, [&](std::size_t step) { return prepare_step(cfg, task, train, step, per_epoch); }, 4, threaded);

  const std::size_t teacher_passes_before = teacher.forward_passes();
  std::size_t step = start;
  for (; step < total; ++step) {
    Prepared prepared = source->next();
    const double lr = lr_at(step, cfg.optim.schedule);

    Tape<float> tape;
    const std::vector<Var> vars = bind(tape, params, true);
    const Var input = tape.constant(std::move(prepared.input));
    const Var logits = forward(tape, cfg.model, vars, input);
    Var loss;
    if (task == Task::distill) {
      Tensor<float> teacher_lp;
      if (cfg.consistency == ConsistencyMode::fixed_teacher) {
        const std::size_t k = cfg.model.classes;
        teacher_lp = Tensor<float>({prepared.batch.indices.size(), k});
        for (std::size_t i = 0; i < prepared.batch.indices.size(); ++i) {
          std::copy_n(fixed_cache.data() + prepared.batch.indices[i] * k, k, teacher_lp.data() + i * k);
        }
      } else {
        teacher_lp = teacher.log_probs(prepared.teacher_view, cfg.loss.temperature);
      }
      loss = combined(tape, logits, teacher_lp, prepared.labels, cfg.loss);
    } else {
      loss = xent(tape, logits, prepared.labels);
    }

    const double value = tape.value(loss).item();
    if (!std::isfinite(value)) {
      MetricsRow row;
      row.step = step + 1;
      row.epoch = static_cast<double>(step + 1) / static_cast<double>(per_epoch);
      row.split = "train";
      row.loss = value;
      row.lr = lr;
      row.wall_s = cfg.log_wall_time ? elapsed() : 0.0;
      metrics.write(row);
      throw NumericError("training diverged at step " + std::to_string(step) + " (loss " + format_number(value) + ")");
    }
    objective_sum += value;
    ++objective_count;

    Gradients<float> grads = tape.backward(loss);
    std::vector<Tensor<float>> grad_list;
    grad_list.reserve(vars.size());
    for (Var v : vars) grad_list.push_back(std::move(grads[v]));
    if (cfg.optim.clip_norm) clip_global_norm<float>(grad_list, *cfg.optim.clip_norm);
    optimizer->step(params, grad_list, lr);
    last_lr = lr;

    const std::size_t done = step + 1;
    if (cfg.eval_interval > 0 && done % cfg.eval_interval == 0) evaluate_now(done);
    if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < total) checkpoint_now(done);
    if (cfg.max_wall_s > 0.0 && elapsed() > cfg.max_wall_s && done < total) {
      result.stopped_by_wall_clock = true;
      step = done;
      break;
    }
  }
  source.reset();
  result.teacher_train_forward_passes = teacher.forward_passes() - teacher_passes_before;
  result.steps = step;

  if (last_eval != step) evaluate_now(step);
  result.checkpoint = checkpoint_now(step);
  if (task == Task::distill) result.teacher_checksum_after = teacher.checksum();
  return result;
}

}  // namespace

RunResult train_teacher(const RunConfig& config, const RunOptions& options) {
  return run_training(config, options, Task::supervised);
}

RunResult distill(const RunConfig& config, const RunOptions& options) {
  return run_training(config, options, Task::distill);
}

RunResult run(const RunConfig& config, const RunOptions& options) {
  return config.teachers.empty() ? train_teacher(config, options) : distill(config, options);
}

std::map<std::string, EvalResult> evaluate_checkpoint(const RunConfig& config, const std::filesystem::path& path) {
  config.validate();
  const Checkpoint ckpt = load_checkpoint(path);
  std::map<std::string, Dataset> splits = load_splits(config.dataset);
  TeacherEnsemble teacher;
  if (!config.teachers.empty()) teacher = TeacherEnsemble::load(config.teachers);
  std::vector<std::string> tags = config.eval_splits;
  if (tags.empty()) {
    for (const std::string& tag : split_tags()) {
      if (config.dataset.splits.contains(tag)) tags.push_back(tag);
    }
  }
  std::map<std::string, EvalResult> out;
  for (const std::string& tag : tags) {
    const Dataset& ds = splits.at(tag);
    std::vector<std::size_t> preds;
    if (!teacher.empty()) {
      preds = teacher_predictions(teacher, ds, config.augment.central_crop_area, config.augment.teacher_resolution);
    }
    out[tag] = evaluate(ckpt.config, ckpt.params, ds,
                        {ckpt.config.input_resolution, config.augment.central_crop_area, 256},
                        teacher.empty() ? nullptr : &preds);
  }
  return out;
}

}  // namespace funmatch
