// funmatch command-line front end.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "funmatch/harness.hpp"
#include "funmatch/metrics.hpp"
#include "funmatch/run_config.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::size_t threads = 1;
};

funmatch::RunConfig load(const GlobalFlags& flags) {
  if (flags.config.empty()) throw funmatch::ConfigError("--config is required");
  funmatch::RunConfig cfg = funmatch::load_run_config(flags.config);
  if (flags.seed) cfg.seed = *flags.seed;
  return cfg;
}

funmatch::RunOptions options(const GlobalFlags& flags, bool resume) {
  funmatch::RunOptions o;
  o.out_dir = flags.out;
  o.threads = flags.threads == 0 ? 1 : flags.threads;
  o.resume = resume;
  return o;
}

void print_final(const funmatch::RunResult& r) {
  std::cout << "run " << r.resolved.run_id << ": " << r.steps << "/" << r.total_steps << " steps";
  if (r.stopped_by_wall_clock) std::cout << " (stopped by max_wall_s)";
  std::cout << ", checkpoint " << (r.run_dir / ("ckpt_" + std::to_string(r.steps) + ".fmck")).string() << "\n";
  for (const auto& [split, e] : r.final_eval) {
    std::cout << "  " << split << ": top1 " << funmatch::format_number(e.top1);
    if (e.agreement) std::cout << ", agreement " << funmatch::format_number(*e.agreement);
    std::cout << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Function-matching distillation engine"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags flags;
  app.add_option("--config", flags.config, "RunConfig JSON file");
  app.add_option("--seed", flags.seed, "Override the config seed");
  app.add_option("--out", flags.out, "Output directory for runs")->capture_default_str();
  app.add_option("--threads", flags.threads, "Worker threads (prefetch, parallel sweep runs)")->capture_default_str();

  bool resume = false;
  auto* train_cmd = app.add_subcommand("train-teacher", "Supervised training from labels");
  train_cmd->add_flag("--resume", resume, "Continue from the latest checkpoint in the run directory");
  auto* distill_cmd = app.add_subcommand("distill", "Distill the configured teachers into the model");
  distill_cmd->add_flag("--resume", resume, "Continue from the latest checkpoint in the run directory");

  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the configured splits");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "Run the lr x weight_decay x temperature grid");

  std::vector<std::size_t> budgets;
  auto* patience_cmd = app.add_subcommand("patience", "Distill at several epoch budgets");
  patience_cmd->add_option("--epochs", budgets, "Epoch budgets (overrides patience_epochs)");

  auto* report_cmd = app.add_subcommand("report-csv", "Summarize every metrics.csv under --out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (train_cmd->parsed()) {
      print_final(funmatch::train_teacher(load(flags), options(flags, resume)));
    } else if (distill_cmd->parsed()) {
      print_final(funmatch::distill(load(flags), options(flags, resume)));
    } else if (eval_cmd->parsed()) {
      const auto results = funmatch::evaluate_checkpoint(load(flags), checkpoint);
      std::cout << "split,count,loss,top1,agreement\n";
      for (const auto& [split, e] : results) {
        std::cout << split << ',' << e.count << ',' << funmatch::format_number(e.loss) << ','
                  << funmatch::format_number(e.top1) << ','
                  << (e.agreement ? funmatch::format_number(*e.agreement) : std::string()) << "\n";
      }
    } else if (sweep_cmd->parsed()) {
      const auto result = funmatch::sweep(load(flags), options(flags, false));
      std::cout << "sweep written to " << (result.sweep_dir / "sweep.csv").string() << "\n";
      for (const auto& [epochs, index] : result.best) {
        const auto& p = result.points[index];
        std::cout << "  epochs " << epochs << ": best " << p.run_id << " (" << result.selection_split << " top1 "
                  << funmatch::format_number(p.selection_top1.value_or(0.0)) << ")\n";
      }
      for (const auto& p : result.points) {
        if (!p.error.empty()) std::cerr << "  failed " << p.run_id << ": " << p.error << "\n";
      }
    } else if (patience_cmd->parsed()) {
      funmatch::RunConfig cfg = load(flags);
      if (!budgets.empty()) cfg.patience_epochs = budgets;
      const auto rows = funmatch::patience_experiment(cfg, options(flags, false));
      std::cout << "epochs,run_id,test_top1\n";
      for (const auto& r : rows) {
        std::cout << r.epochs << ',' << r.run_id << ',' << funmatch::format_number(r.test_top1) << "\n";
      }
    } else if (report_cmd->parsed()) {
      std::cout << funmatch::report_csv(flags.out);
    }
  } catch (const funmatch::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const funmatch::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const funmatch::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
