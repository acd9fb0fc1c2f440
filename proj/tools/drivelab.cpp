// drivelab command-line entry point.

#include <cctype>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drivelab/eval/eval.hpp"
#include "drivelab/eval/oracle.hpp"
#include "drivelab/eval/plot.hpp"
#include "drivelab/pipeline/trainer.hpp"

using namespace drivelab;

namespace {

pipeline::TrainConfig load_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
  pipeline::TrainConfig cfg = path.empty() ? pipeline::TrainConfig{} : pipeline::load_config(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw pipeline::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

sim::LayoutFamily parse_layout_arg(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return sim::parse_family(s);
}

void print_report(const eval::EvalReport& r) {
  std::cout << sim::task_name(r.task) << " layout " << static_cast<char>(r.layout) << " seed " << r.seed << ": "
            << eval::format_summary(r) << " over " << r.episodes.size() << " episodes, " << r.total_steps
            << " env steps\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drivelab: intrinsic exploration and fine-tuning on a 2D driving simulator"};
  app.require_subcommand(1);

  std::string config_path, ckpt, out, metrics, task = "lf", mode = "few", layout = "a", report;
  std::vector<std::string> sets, metrics_files;
  std::size_t steps = 0, trials = 100;
  std::uint64_t seed = 0;

  auto* explore = app.add_subcommand("explore", "Intrinsic exploration from scratch; writes a checkpoint");
  explore->add_option("--config", config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
  explore->add_option("--out", out, "Checkpoint to write")->required();
  explore->add_option("--metrics", metrics, "Metrics CSV to append to");
  explore->add_option("--set", sets, "Config override key=value (repeatable)");

  auto* finetune = app.add_subcommand("finetune", "Zero- or few-shot adaptation of a checkpoint, then evaluation");
  finetune->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  finetune->add_option("--ckpt", ckpt, "Checkpoint from explore")->required()->check(CLI::ExistingFile);
  finetune->add_option("--task", task, "lf, ca or lf_ca")->required();
  finetune->add_option("--mode", mode, "zero or few")->required();
  finetune->add_option("--out", out, "Checkpoint to write after fine-tuning");
  finetune->add_option("--metrics", metrics, "Metrics CSV to append to");
  finetune->add_option("--layout", layout, "Evaluation layout, a or b");
  finetune->add_option("--steps", steps, "Evaluation env steps (default eval.steps)");
  finetune->add_option("--seed", seed, "Evaluation seed (default eval.seed)");
  finetune->add_option("--report", report, "Report CSV to write");
  finetune->add_option("--set", sets, "Config override key=value (repeatable)");

  auto* evaluate = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  evaluate->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--task", task, "lf, ca or lf_ca")->required();
  evaluate->add_option("--layout", layout, "a or b")->required();
  evaluate->add_option("--steps", steps, "Evaluation env steps")->required();
  evaluate->add_option("--seed", seed, "Evaluation seed")->required();
  evaluate->add_option("--report", report, "Report CSV to write")->required();

  auto* plot = app.add_subcommand("plot", "Reward-rate chart (SVG) from metrics CSVs");
  plot->add_option("--metrics", metrics_files, "Metrics CSV files")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", out, "SVG to write")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference oracle over every op and the world model");
  gradcheck->add_option("--trials", trials, "Random trials per op");
  gradcheck->add_option("--seed", seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "drivelab: " << e.what() << "\n" << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*explore) {
      const pipeline::TrainConfig cfg = load_with_overrides(config_path, sets);
      pipeline::Trainer trainer(cfg);
      if (!metrics.empty()) trainer.set_metrics(std::make_shared<pipeline::MetricsLog>(metrics));
      trainer.set_checkpoint_path(out);
      trainer.run_explore();
      trainer.save(out);
      std::cout << "explored " << trainer.counters().env_steps << " env steps, " << trainer.counters().updates
                << " updates (" << trainer.counters().skipped_updates << " skipped before warm-up); wrote " << out
                << "\n";
    } else if (*finetune) {
      const pipeline::Checkpoint ck = pipeline::Checkpoint::load(ckpt);
      pipeline::TrainConfig cfg = config_path.empty() ? pipeline::stored_config(ck) : pipeline::load_config(config_path);
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw pipeline::ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.validate();
      auto trainer = pipeline::Trainer::from_checkpoint(ck, cfg);
      if (!metrics.empty()) trainer->set_metrics(std::make_shared<pipeline::MetricsLog>(metrics));
      const std::uint64_t before = trainer->optimizer_steps();
      const eval::EvalReport r =
          eval::finetune_phase(*trainer, sim::parse_task(task), eval::parse_mode(mode), parse_layout_arg(layout),
                               finetune->count("--steps") ? steps : cfg.eval_steps,
                               finetune->count("--seed") ? seed : cfg.eval_seed);
      std::cout << "fine-tune " << mode << ": " << trainer->optimizer_steps() - before << " optimizer steps\n";
      print_report(r);
      if (!out.empty()) trainer->save(out);
      if (!report.empty()) eval::write_report_csv(report, {r});
    } else if (*evaluate) {
      const pipeline::Checkpoint ck = pipeline::Checkpoint::load(ckpt);
      auto trainer = pipeline::Trainer::from_checkpoint(ck, pipeline::stored_config(ck));
      const eval::EvalReport r = eval::run_eval(*trainer, sim::parse_task(task), parse_layout_arg(layout), steps, seed);
      print_report(r);
      eval::write_report_csv(report, {r});
    } else if (*plot) {
      std::vector<std::filesystem::path> paths(metrics_files.begin(), metrics_files.end());
      eval::plot_reward_rate(paths, out);
      std::cout << "wrote " << out << "\n";
    } else if (*gradcheck) {
      eval::OracleSuite suite = eval::run_op_oracle(trials, seed);
      suite.cases.push_back(eval::run_model_oracle(trials, seed + 1));
      for (const auto& c : suite.cases) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.trials << " trials, " << c.coords
                  << " coords, max rel err " << c.max_rel_error << " (rtol " << c.rtol << ")\n";
      }
      if (!suite.passed()) {
        std::cerr << "drivelab: gradient oracle failed\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "drivelab: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
