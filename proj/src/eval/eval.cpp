#include "drivelab/eval/eval.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "drivelab/pipeline/metrics.hpp"

namespace drivelab::eval {

std::size_t EvalReport::count(sim::Event e) const {
  std::size_t n = 0;
  for (const auto& ep : episodes) n += ep.reason == e ? 1 : 0;
  return n;
}

double EvalReport::sr() const {
  if (episodes.empty()) return 0.0;
  return 100.0 * static_cast<double>(completed()) / static_cast<double>(episodes.size());
}

sim::TrackLayout eval_layout(sim::LayoutFamily family, std::uint64_t seed, const sim::LayoutParams& params) {
  // Offset away from the small indices training runs tend to use.
  return sim::randomize(family, seed ^ 0x5eed0fe7a1000000ull, params);
}

EvalReport run_eval(model::WorldModel& wm, agent::Agent& agent, sim::Task task, sim::LayoutFamily family,
                    std::size_t eval_steps, std::uint64_t seed, const sim::EnvConfig& env_cfg,
                    const sim::LayoutParams& params) {
  if (eval_steps == 0) throw std::invalid_argument("run_eval: eval_steps must be positive");
  if (family != sim::LayoutFamily::A && family != sim::LayoutFamily::B) {
    throw std::invalid_argument("run_eval: unknown layout");
  }
  const auto task_index = static_cast<std::size_t>(task);
  if (task_index >= sim::kNumTasks) throw std::invalid_argument("run_eval: unknown task");

  EvalReport report;
  report.task = task;
  report.layout = family;
  report.seed = seed;
  sim::DriveEnv env(eval_layout(family, seed, params), env_cfg);
  pipeline::LatentFilter filter(wm, agent);
  diff::Rng rng(seed);
  diff::Rng unused(seed + 1);  // greedy acting draws nothing
  while (report.total_steps < eval_steps) {
    EpisodeRecord ep;
    ep.task = task;
    ep.layout = family;
    ep.seed = rng.next_u64();
    env.reset(ep.seed);
    filter.reset();
    while (true) {
      const auto a = filter.act(env.observation(), true, unused);
      const sim::StepOutcome out = env.step({a[0], a[1]});
      ++ep.steps;
      ep.task_return += out.r_ext[task_index];
      if (out.terminated) {
        ep.reason = out.reason;
        ep.events = out.events;
        break;
      }
    }
    report.total_steps += ep.steps;
    report.episodes.push_back(ep);
  }
  return report;
}

EvalReport run_eval(pipeline::Trainer& trainer, sim::Task task, sim::LayoutFamily family, std::size_t eval_steps,
                    std::uint64_t seed) {
  const auto& cfg = trainer.config();
  return run_eval(trainer.world_model(), trainer.agent(), task, family, eval_steps, seed, cfg.env,
                  cfg.layout_params());
}

std::vector<EvalReport> transfer_matrix(pipeline::Trainer& trainer, const std::vector<sim::Task>& tasks,
                                        const std::vector<sim::LayoutFamily>& layouts, std::size_t eval_steps,
                                        const std::vector<std::uint64_t>& seeds) {
  std::vector<EvalReport> out;
  for (sim::Task task : tasks)
    for (sim::LayoutFamily layout : layouts)
      for (std::uint64_t seed : seeds) out.push_back(run_eval(trainer, task, layout, eval_steps, seed));
  return out;
}

std::string format_report_row(const EvalReport& r) {
  std::string s = sim::task_name(r.task) + "," + std::string(1, static_cast<char>(r.layout)) + "," +
                  std::to_string(r.seed) + "," + std::to_string(r.episodes.size()) + "," +
                  pipeline::format_double(r.sr()) + "," + pipeline::format_double(r.ir());
  for (sim::Event e : {sim::Event::Collision, sim::Event::OffRoad, sim::Event::WrongDirection, sim::Event::Stall,
                       sim::Event::Completed}) {
    s += "," + std::to_string(r.count(e));
  }
  return s;
}

std::string format_report_csv(const std::vector<EvalReport>& reports) {
  std::string s = std::string(kReportHeader) + "\n";
  for (const auto& r : reports) s += format_report_row(r) + "\n";
  return s;
}

void write_report_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write report " + path.string());
  f << format_report_csv(reports);
}

std::string format_summary(const EvalReport& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "SR %.2f / IR %.2f", r.sr(), r.ir());
  return buf;
}

FinetuneMode parse_mode(const std::string& s) {
  if (s == "zero" || s == "zero_shot") return FinetuneMode::Zero;
  if (s == "few" || s == "few_shot") return FinetuneMode::Few;
  throw std::invalid_argument("unknown fine-tune mode '" + s + "' (expected zero or few)");
}

EvalReport finetune_phase(pipeline::Trainer& trainer, sim::Task task, FinetuneMode mode, sim::LayoutFamily family,
                          std::size_t eval_steps, std::uint64_t eval_seed) {
  if (mode == FinetuneMode::Few) trainer.run_finetune(task);
  return run_eval(trainer, task, family, eval_steps, eval_seed);
}

}  // namespace drivelab::eval
