#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "funmatch/harness.hpp"

namespace funmatch {

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string optional_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::string child_id(std::size_t epochs, double temperature, double lr, double wd) {
  return "e" + std::to_string(epochs) + "_T" + format_number(temperature) + "_lr" + format_number(lr) + "_wd" +
         format_number(wd);
}

/// Last row of `split` without going through an audit; used only for reporting after selection.
std::optional<MetricsRow> report_row(const std::vector<MetricsRow>& rows, const std::string& split) {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->split == split) return *it;
  }
  return std::nullopt;
}

/// Runs jobs[i]() for every i with up to `threads` workers.
void run_parallel(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < std::min(threads, count); ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  }
  for (auto& t : workers) t.join();
}

}  // namespace

std::optional<MetricsRow> final_row(const std::vector<MetricsRow>& rows, const std::string& split, SplitAudit& audit) {
  audit.record(split);
  return report_row(rows, split);
}

std::map<std::size_t, std::size_t> select_best(const std::vector<SweepPoint>& points) {
  std::map<std::size_t, std::size_t> best;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const SweepPoint& p = points[i];
    if (!p.error.empty() || !p.selection_top1) continue;
    const auto it = best.find(p.epochs);
    if (it == best.end() || *p.selection_top1 > *points[it->second].selection_top1) best[p.epochs] = i;
  }
  return best;
}

SweepResult sweep(const RunConfig& base, const RunOptions& options) {
  base.validate();
  if (!base.sweep) throw ConfigError("sweep: config has no sweep section");
  const SweepConfig& grid = *base.sweep;
  const std::vector<std::size_t> budgets = grid.epochs.empty() ? std::vector<std::size_t>{base.epochs} : grid.epochs;

  SweepResult result;
  result.sweep_dir = options.out_dir / base.run_id;
  result.selection_split = grid.selection;
  std::filesystem::create_directories(result.sweep_dir);

  for (std::size_t epochs : budgets) {
    for (double t : grid.temperature) {
      for (double lr : grid.lr) {
        for (double wd : grid.weight_decay) {
          result.points.push_back({epochs, t, lr, wd, child_id(epochs, t, lr, wd), {}, {}, {}});
        }
      }
    }
  }

  RunOptions child_options = options;
  child_options.out_dir = result.sweep_dir;
  const bool parallel = options.threads > 1 && result.points.size() > 1;
  if (parallel) child_options.threads = 1;

  run_parallel(result.points.size(), parallel ? options.threads : 1, [&](std::size_t i) {
    SweepPoint& p = result.points[i];
    RunConfig child = base;
    child.run_id = p.run_id;
    child.epochs = p.epochs;
    child.loss.temperature = p.temperature;
    child.optim.schedule.peak_lr = p.lr;
    child.optim.weight_decay = p.weight_decay;
    child.sweep.reset();
    child.patience_epochs.clear();
    if (!child.eval_splits.empty() &&
        std::find(child.eval_splits.begin(), child.eval_splits.end(), grid.selection) == child.eval_splits.end()) {
      child.eval_splits.push_back(grid.selection);
    }
    try {
      run(child, child_options);
    } catch (const Error& e) {
      p.error = e.what();
    }
  });

  // Selection reads only the selection split of each child's metrics.
  for (SweepPoint& p : result.points) {
    if (!p.error.empty()) continue;
    const auto rows = read_metrics(result.sweep_dir / p.run_id / "metrics.csv");
    if (const auto row = final_row(rows, grid.selection, result.audit)) p.selection_top1 = row->top1;
  }
  result.best = select_best(result.points);

  for (SweepPoint& p : result.points) {
    if (!p.error.empty()) continue;
    const auto rows = read_metrics(result.sweep_dir / p.run_id / "metrics.csv");
    if (const auto row = report_row(rows, "test")) p.test_top1 = row->top1;
  }

  std::ostringstream csv;
  csv << "epochs,temperature,lr,weight_decay,run_id,status,selection_split,selection_top1,test_top1,best\n";
  for (std::size_t i = 0; i < result.points.size(); ++i) {
    const SweepPoint& p = result.points[i];
    const auto it = result.best.find(p.epochs);
    std::string status = p.error.empty() ? "ok" : "failed: " + p.error;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    csv << p.epochs << ',' << format_number(p.temperature) << ',' << format_number(p.lr) << ','
        << format_number(p.weight_decay) << ',' << p.run_id << ',' << status << ',' << grid.selection << ','
        << optional_number(p.selection_top1) << ',' << optional_number(p.test_top1) << ','
        << (it != result.best.end() && it->second == i ? 1 : 0) << '\n';
  }
  write_file(result.sweep_dir / "sweep.csv", csv.str());
  return result;
}

std::vector<PatienceRow> patience_experiment(const RunConfig& base, const RunOptions& options) {
  base.validate();
  if (base.patience_epochs.empty()) throw ConfigError("patience: patience_epochs must be non-empty");
  const std::filesystem::path dir = options.out_dir / base.run_id;
  std::filesystem::create_directories(dir);
  RunOptions child_options = options;
  child_options.out_dir = dir;

  std::vector<PatienceRow> rows;
  std::vector<MetricsRow> finals;
  for (std::size_t epochs : base.patience_epochs) {
    PatienceRow row;
    row.epochs = epochs;
    std::filesystem::path metrics_path;
    if (base.sweep) {
      RunConfig child = base;
      child.run_id = "e" + std::to_string(epochs);
      child.sweep->epochs = {epochs};
      child.patience_epochs.clear();
      const SweepResult s = sweep(child, child_options);
      const auto it = s.best.find(epochs);
      if (it == s.best.end()) throw NumericError("patience: every sweep run failed at " + std::to_string(epochs) + " epochs");
      const SweepPoint& p = s.points[it->second];
      row.run_id = child.run_id + "/" + p.run_id;
      row.temperature = p.temperature;
      row.lr = p.lr;
      row.weight_decay = p.weight_decay;
      metrics_path = s.sweep_dir / p.run_id / "metrics.csv";
    } else {
      RunConfig child = base;
      child.run_id = "e" + std::to_string(epochs);
      child.epochs = epochs;
      child.patience_epochs.clear();
      const RunResult r = run(child, child_options);
      row.run_id = child.run_id;
      row.temperature = child.loss.temperature;
      row.lr = child.optim.schedule.peak_lr;
      row.weight_decay = child.optim.weight_decay;
      metrics_path = r.run_dir / "metrics.csv";
    }
    const auto metrics = read_metrics(metrics_path);
    const auto test = report_row(metrics, "test");
    if (!test || !test->top1) throw ConfigError("patience: runs must evaluate a test split");
    row.test_top1 = *test->top1;
    if (const auto val = report_row(metrics, "val")) row.val_top1 = val->top1;
    MetricsRow final_test = *test;
    final_test.epoch = static_cast<double>(epochs);
    finals.push_back(final_test);
    rows.push_back(row);
  }

  std::ostringstream csv;
  csv << "epochs,run_id,temperature,lr,weight_decay,val_top1,test_top1\n";
  for (const PatienceRow& r : rows) {
    csv << r.epochs << ',' << r.run_id << ',' << format_number(r.temperature) << ',' << format_number(r.lr) << ','
        << format_number(r.weight_decay) << ',' << optional_number(r.val_top1) << ',' << format_number(r.test_top1)
        << '\n';
  }
  write_file(dir / "patience.csv", csv.str());
  MetricsWriter writer(dir / "metrics.csv");
  for (const MetricsRow& m : finals) writer.write(m);
  return rows;
}

std::string report_csv(const std::filesystem::path& out_dir) {
  if (!std::filesystem::is_directory(out_dir)) throw IoError("report-csv: '" + out_dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(out_dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::ostringstream csv;
  csv << "run_id,split,step,epoch,loss,top1,agreement\n";
  for (const auto& file : files) {
    const std::string run_id = std::filesystem::relative(file.parent_path(), out_dir).generic_string();
    const auto rows = read_metrics(file);
    std::vector<std::string> order;
    for (const MetricsRow& r : rows) {
      if (std::find(order.begin(), order.end(), r.split) == order.end()) order.push_back(r.split);
    }
    for (const std::string& split : order) {
      const MetricsRow r = *report_row(rows, split);
      csv << run_id << ',' << split << ',' << r.step << ',' << format_number(r.epoch) << ',' << format_number(r.loss)
          << ',' << optional_number(r.top1) << ',' << optional_number(r.agreement) << '\n';
    }
  }
  write_file(out_dir / "summary.csv", csv.str());
  return csv.str();
}

}  // namespace funmatch
