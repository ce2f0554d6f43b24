#include "funmatch/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "funmatch/split.hpp"
#include "json_io.hpp"

namespace funmatch {

using json_io::get;
using json_io::get_or;
using json_io::json;
using json_io::require_only_keys;

namespace {

constexpr double kShampooWeightDecay = 0.000375;

SyntheticSource parse_synthetic(const json& j) {
  const std::string ctx = "dataset.synthetic";
  require_only_keys(j, {"seed", "train_size", "validation_size", "test_size", "classes", "resolution",
                        "angle_jitter_deg", "noise_std", "distractors"}, ctx);
  SyntheticSource s;
  s.seed = get_or(j, "seed", s.seed, ctx);
  s.train_size = get_or(j, "train_size", s.train_size, ctx);
  s.validation_size = get_or(j, "validation_size", s.validation_size, ctx);
  s.test_size = get_or(j, "test_size", s.test_size, ctx);
  s.classes = get_or(j, "classes", s.classes, ctx);
  s.resolution = get_or(j, "resolution", s.resolution, ctx);
  s.options.angle_jitter_deg = get_or(j, "angle_jitter_deg", s.options.angle_jitter_deg, ctx);
  s.options.noise_std = get_or(j, "noise_std", s.options.noise_std, ctx);
  s.options.distractors = get_or(j, "distractors", s.options.distractors, ctx);
  return s;
}

DatasetConfig parse_dataset(const json& j) {
  const std::string ctx = "dataset";
  if (!j.is_object()) throw ConfigError("dataset must be an object");
  require_only_keys(j, {"source", "synthetic", "idx", "splits"}, ctx);
  DatasetConfig d;
  const auto source = get_or<std::string>(j, "source", "synthetic", ctx);
  if (source == "synthetic") {
    d.source = DataSource::synthetic;
  } else if (source == "idx") {
    d.source = DataSource::idx;
  } else {
    throw ConfigError("dataset.source: unknown source '" + source + "' (expected synthetic or idx)");
  }
  if (j.contains("synthetic")) d.synthetic = parse_synthetic(j.at("synthetic"));
  if (j.contains("idx")) {
    const json& idx = j.at("idx");
    require_only_keys(idx, {"classes", "files"}, "dataset.idx");
    d.idx_classes = get_or(idx, "classes", d.idx_classes, "dataset.idx");
    const json& files = json_io::require(idx, "files", "dataset.idx");
    if (!files.is_object()) throw ConfigError("dataset.idx.files must be an object");
    for (const auto& [name, pair] : files.items()) {
      const std::string fctx = "dataset.idx.files." + name;
      require_only_keys(pair, {"images", "labels"}, fctx);
      d.idx[name] = {get<std::string>(pair, "images", fctx), get<std::string>(pair, "labels", fctx)};
    }
  }
  if (d.source == DataSource::idx && d.idx.empty()) throw ConfigError("dataset.idx.files is required for source idx");
  const json& splits = json_io::require(j, "splits", ctx);
  if (!splits.is_object()) throw ConfigError("dataset.splits must be an object");
  for (const auto& [tag, spec] : splits.items()) {
    if (std::find(split_tags().begin(), split_tags().end(), tag) == split_tags().end()) {
      throw ConfigError("dataset.splits: unknown split tag '" + tag + "' (expected train, minival, val or test)");
    }
    if (!spec.is_string()) throw ConfigError("dataset.splits." + tag + " must be a string");
    d.splits[tag] = spec.get<std::string>();
  }
  return d;
}

AugmentConfig parse_augment(const json& j) {
  const std::string ctx = "augment";
  require_only_keys(j, {"area_min", "area_max", "aspect_min", "aspect_max", "flip_prob", "mixup_alpha",
                        "teacher_resolution", "student_resolution", "central_crop_area"}, ctx);
  AugmentConfig a;
  a.area_min = get_or(j, "area_min", a.area_min, ctx);
  a.area_max = get_or(j, "area_max", a.area_max, ctx);
  a.aspect_min = get_or(j, "aspect_min", a.aspect_min, ctx);
  a.aspect_max = get_or(j, "aspect_max", a.aspect_max, ctx);
  a.flip_prob = get_or(j, "flip_prob", a.flip_prob, ctx);
  a.mixup_alpha = get_or(j, "mixup_alpha", a.mixup_alpha, ctx);
  a.teacher_resolution = get_or(j, "teacher_resolution", a.teacher_resolution, ctx);
  a.student_resolution = get_or(j, "student_resolution", a.student_resolution, ctx);
  a.central_crop_area = get_or(j, "central_crop_area", a.central_crop_area, ctx);
  return a;
}

OptimConfig parse_optim(const json& j, bool& warmup_auto) {
  const std::string ctx = "optim";
  require_only_keys(j, {"optimizer", "peak_lr", "warmup_steps", "decay", "momentum", "nesterov", "adam_beta1",
                        "adam_beta2", "adam_eps", "weight_decay", "clip_norm", "shampoo_eps", "block_size",
                        "refresh_interval"}, ctx);
  OptimConfig o;
  o.kind = parse_optimizer(get_or<std::string>(j, "optimizer", "sgd", ctx));
  o.schedule.peak_lr = get_or(j, "peak_lr", o.schedule.peak_lr, ctx);
  warmup_auto = true;
  if (const auto it = j.find("warmup_steps"); it != j.end() && !it->is_null()) {
    if (it->is_string()) {
      if (it->get<std::string>() != "auto") throw ConfigError("optim.warmup_steps must be an integer or \"auto\"");
    } else {
      o.schedule.warmup_steps = get<std::size_t>(j, "warmup_steps", ctx);
      warmup_auto = false;
    }
  }
  o.schedule.decay = parse_decay(get_or<std::string>(j, "decay", "quadratic", ctx));
  o.momentum = get_or(j, "momentum", o.momentum, ctx);
  o.nesterov = get_or(j, "nesterov", o.nesterov, ctx);
  o.adam_beta1 = get_or(j, "adam_beta1", o.adam_beta1, ctx);
  o.adam_beta2 = get_or(j, "adam_beta2", o.adam_beta2, ctx);
  o.adam_eps = get_or(j, "adam_eps", o.adam_eps, ctx);
  o.weight_decay = get_or(j, "weight_decay", o.kind == OptimizerKind::shampoo ? kShampooWeightDecay : 0.0, ctx);
  if (const auto it = j.find("clip_norm"); it != j.end() && !it->is_null()) o.clip_norm = get<double>(j, "clip_norm", ctx);
  o.shampoo_eps = get_or(j, "shampoo_eps", o.shampoo_eps, ctx);
  o.block_size = get_or(j, "block_size", o.block_size, ctx);
  o.refresh_interval = get_or(j, "refresh_interval", o.refresh_interval, ctx);
  return o;
}

SweepConfig parse_sweep(const json& j) {
  const std::string ctx = "sweep";
  require_only_keys(j, {"lr", "weight_decay", "temperature", "epochs", "selection"}, ctx);
  SweepConfig s;
  s.lr = get_or(j, "lr", s.lr, ctx);
  s.weight_decay = get_or(j, "weight_decay", s.weight_decay, ctx);
  s.temperature = get_or(j, "temperature", s.temperature, ctx);
  s.epochs = get_or(j, "epochs", s.epochs, ctx);
  s.selection = get_or(j, "selection", s.selection, ctx);
  return s;
}

json augment_to_json(const AugmentConfig& a) {
  return {{"area_min", a.area_min},
          {"area_max", a.area_max},
          {"aspect_min", a.aspect_min},
          {"aspect_max", a.aspect_max},
          {"flip_prob", a.flip_prob},
          {"mixup_alpha", a.mixup_alpha},
          {"teacher_resolution", a.teacher_resolution},
          {"student_resolution", a.student_resolution},
          {"central_crop_area", a.central_crop_area}};
}

json optim_to_json(const OptimConfig& o, bool warmup_auto) {
  json j{{"optimizer", std::string(to_string(o.kind))},
         {"peak_lr", o.schedule.peak_lr},
         {"decay", std::string(to_string(o.schedule.decay))},
         {"momentum", o.momentum},
         {"nesterov", o.nesterov},
         {"adam_beta1", o.adam_beta1},
         {"adam_beta2", o.adam_beta2},
         {"adam_eps", o.adam_eps},
         {"weight_decay", o.weight_decay},
         {"shampoo_eps", o.shampoo_eps},
         {"block_size", o.block_size},
         {"refresh_interval", o.refresh_interval}};
  j["warmup_steps"] = warmup_auto ? json("auto") : json(o.schedule.warmup_steps);
  j["clip_norm"] = o.clip_norm ? json(*o.clip_norm) : json(nullptr);
  return j;
}

json dataset_to_json(const DatasetConfig& d) {
  json j;
  j["source"] = d.source == DataSource::synthetic ? "synthetic" : "idx";
  const SyntheticSource& s = d.synthetic;
  j["synthetic"] = {{"seed", s.seed},
                    {"train_size", s.train_size},
                    {"validation_size", s.validation_size},
                    {"test_size", s.test_size},
                    {"classes", s.classes},
                    {"resolution", s.resolution},
                    {"angle_jitter_deg", s.options.angle_jitter_deg},
                    {"noise_std", s.options.noise_std},
                    {"distractors", s.options.distractors}};
  if (!d.idx.empty()) {
    json files = json::object();
    for (const auto& [name, f] : d.idx) files[name] = {{"images", f.images}, {"labels", f.labels}};
    j["idx"] = {{"classes", d.idx_classes}, {"files", files}};
  }
  j["splits"] = d.splits;
  return j;
}

void check_disjoint(const std::map<std::string, std::string>& splits) {
  std::vector<std::pair<std::string, SplitSpec>> parsed;
  for (const auto& [tag, text] : splits) parsed.emplace_back(tag, parse_split_spec(text));
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    for (std::size_t j = i + 1; j < parsed.size(); ++j) {
      const SplitSpec& a = parsed[i].second;
      const SplitSpec& b = parsed[j].second;
      if (a.name != b.name) continue;
      const int a0 = a.lower.value_or(0), a1 = a.upper.value_or(100);
      const int b0 = b.lower.value_or(0), b1 = b.upper.value_or(100);
      if (a0 < a1 && b0 < b1 && a0 < b1 && b0 < a1) {
        throw ConfigError("dataset.splits: '" + parsed[i].first + "' (" + splits.at(parsed[i].first) + ") and '" +
                          parsed[j].first + "' (" + splits.at(parsed[j].first) + ") overlap");
      }
    }
  }
}

}  // namespace

const std::vector<std::string>& split_tags() {
  static const std::vector<std::string> tags{"train", "minival", "val", "test"};
  return tags;
}

void RunConfig::validate() const {
  if (run_id.empty()) throw ConfigError("run_id must be non-empty");
  if (run_id.find_first_of("/\\") != std::string::npos || run_id == "." || run_id == "..") {
    throw ConfigError("run_id '" + run_id + "' must be a plain directory name");
  }
  model.validate();
  augment.validate();
  loss.validate();
  OptimConfig probe = optim;
  probe.schedule.total_steps = std::max<std::size_t>(probe.schedule.warmup_steps + 1, 1);
  probe.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(max_wall_s >= 0.0)) throw ConfigError("max_wall_s must be >= 0");
  if (!dataset.splits.contains("train")) throw ConfigError("dataset.splits.train is required");
  check_disjoint(dataset.splits);
  for (const std::string& tag : eval_splits) {
    if (!dataset.splits.contains(tag)) throw ConfigError("eval_splits: split '" + tag + "' is not configured");
  }
  for (const TeacherRef& t : teachers) {
    if (t.checkpoint.empty()) throw ConfigError("teachers: checkpoint path is empty");
    if (t.resolution == 0) throw ConfigError("teachers: resolution must be positive");
    if (t.resolution > augment.teacher_resolution) {
      throw ConfigError("teachers: resolution " + std::to_string(t.resolution) + " exceeds augment.teacher_resolution " +
                        std::to_string(augment.teacher_resolution));
    }
  }
  if (sweep) {
    if (sweep->lr.empty() || sweep->weight_decay.empty() || sweep->temperature.empty()) {
      throw ConfigError("sweep: lr, weight_decay and temperature grids must be non-empty");
    }
    if (sweep->selection != "val" && sweep->selection != "minival") {
      throw ConfigError("sweep.selection must be val or minival");
    }
    if (!dataset.splits.contains(sweep->selection)) {
      throw ConfigError("sweep.selection split '" + sweep->selection + "' is not configured");
    }
    for (double t : sweep->temperature) {
      if (!(t > 0.0)) throw ConfigError("sweep.temperature values must be positive");
    }
    for (double v : sweep->weight_decay) {
      if (!(v >= 0.0)) throw ConfigError("sweep.weight_decay values must be >= 0");
    }
  }
}

RunConfig parse_run_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  const std::string ctx = "config";
  require_only_keys(j, {"run_id", "seed", "dataset", "model", "init_checkpoint", "teachers", "consistency", "augment",
                        "loss", "optim", "epochs", "batch_size", "eval_interval", "checkpoint_interval", "max_wall_s",
                        "log_wall_time", "supervised", "eval_splits", "sweep", "patience_epochs"}, ctx);
  RunConfig c;
  c.run_id = get_or(j, "run_id", c.run_id, ctx);
  c.seed = get_or(j, "seed", c.seed, ctx);
  c.dataset = parse_dataset(json_io::require(j, "dataset", ctx));
  c.model = json_io::model_config_from_json(json_io::require(j, "model", ctx), "model");
  if (const auto it = j.find("init_checkpoint"); it != j.end() && !it->is_null()) {
    c.init_checkpoint = get<std::string>(j, "init_checkpoint", ctx);
  }
  if (const auto it = j.find("teachers"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("teachers must be an array");
    for (const json& t : *it) {
      require_only_keys(t, {"checkpoint", "resolution"}, "teachers[]");
      TeacherRef ref;
      ref.checkpoint = get<std::string>(t, "checkpoint", "teachers[]");
      ref.resolution = get_or(t, "resolution", c.model.input_resolution, "teachers[]");
      c.teachers.push_back(ref);
    }
  }
  c.consistency = parse_consistency_mode(get_or<std::string>(j, "consistency", "function_matching", ctx));
  if (j.contains("augment")) c.augment = parse_augment(j.at("augment"));
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    require_only_keys(l, {"temperature", "label_weight"}, "loss");
    c.loss.temperature = get_or(l, "temperature", c.loss.temperature, "loss");
    c.loss.label_weight = get_or(l, "label_weight", c.loss.label_weight, "loss");
  }
  if (j.contains("optim")) c.optim = parse_optim(j.at("optim"), c.warmup_auto);
  c.epochs = get_or(j, "epochs", c.epochs, ctx);
  c.batch_size = get_or(j, "batch_size", c.batch_size, ctx);
  c.eval_interval = get_or(j, "eval_interval", c.eval_interval, ctx);
  c.checkpoint_interval = get_or(j, "checkpoint_interval", c.checkpoint_interval, ctx);
  c.max_wall_s = get_or(j, "max_wall_s", c.max_wall_s, ctx);
  c.log_wall_time = get_or(j, "log_wall_time", c.log_wall_time, ctx);
  if (j.contains("supervised")) {
    const json& s = j.at("supervised");
    require_only_keys(s, {"random_crop", "mixup"}, "supervised");
    c.supervised.random_crop = get_or(s, "random_crop", false, "supervised");
    c.supervised.mixup = get_or(s, "mixup", false, "supervised");
  }
  c.eval_splits = get_or(j, "eval_splits", c.eval_splits, ctx);
  if (j.contains("sweep") && !j.at("sweep").is_null()) c.sweep = parse_sweep(j.at("sweep"));
  c.patience_epochs = get_or(j, "patience_epochs", c.patience_epochs, ctx);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["run_id"] = c.run_id;
  j["seed"] = c.seed;
  j["dataset"] = dataset_to_json(c.dataset);
  j["model"] = json_io::model_config_to_json(c.model);
  j["init_checkpoint"] = c.init_checkpoint ? json(*c.init_checkpoint) : json(nullptr);
  j["teachers"] = json::array();
  for (const TeacherRef& t : c.teachers) j["teachers"].push_back({{"checkpoint", t.checkpoint}, {"resolution", t.resolution}});
  j["consistency"] = std::string(to_string(c.consistency));
  j["augment"] = augment_to_json(c.augment);
  j["loss"] = {{"temperature", c.loss.temperature}, {"label_weight", c.loss.label_weight}};
  j["optim"] = optim_to_json(c.optim, c.warmup_auto);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["eval_interval"] = c.eval_interval;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["max_wall_s"] = c.max_wall_s;
  j["log_wall_time"] = c.log_wall_time;
  j["supervised"] = {{"random_crop", c.supervised.random_crop}, {"mixup", c.supervised.mixup}};
  j["eval_splits"] = c.eval_splits;
  if (c.sweep) {
    j["sweep"] = {{"lr", c.sweep->lr},
                  {"weight_decay", c.sweep->weight_decay},
                  {"temperature", c.sweep->temperature},
                  {"epochs", c.sweep->epochs},
                  {"selection", c.sweep->selection}};
  } else {
    j["sweep"] = nullptr;
  }
  j["patience_epochs"] = c.patience_epochs;
  return j.dump(2) + "\n";
}

std::map<std::string, Dataset> load_splits(const DatasetConfig& config) {
  SplitRegistry registry;
  if (config.source == DataSource::synthetic) {
    const SyntheticSource& s = config.synthetic;
    // Each base split gets its own generator seed so sizes can change independently.
    registry.add(gen_synthetic(s.seed, s.train_size, s.classes, s.resolution, s.options, "train"));
    registry.add(gen_synthetic(s.seed + 1, s.validation_size, s.classes, s.resolution, s.options, "validation"));
    registry.add(gen_synthetic(s.seed + 2, s.test_size, s.classes, s.resolution, s.options, "test"));
  } else {
    for (const auto& [name, files] : config.idx) {
      registry.add(load_idx(files.images, files.labels, config.idx_classes, name));
    }
  }
  std::map<std::string, Dataset> out;
  for (const auto& [tag, text] : config.splits) {
    Dataset ds = registry.resolve(text);
    ds.name = tag;
    out.emplace(tag, std::move(ds));
  }
  return out;
}

}  // namespace funmatch
