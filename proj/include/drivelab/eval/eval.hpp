#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "drivelab/agent/agent.hpp"
#include "drivelab/model/rssm.hpp"
#include "drivelab/pipeline/trainer.hpp"
#include "drivelab/sim/env.hpp"

namespace drivelab::eval {

struct EpisodeRecord {
  sim::Task task = sim::Task::LF;
  sim::LayoutFamily layout = sim::LayoutFamily::A;
  std::uint64_t seed = 0;  // reset seed
  std::size_t steps = 0;
  sim::Event reason = sim::Event::Completed;
  sim::EventSet events;  // every event raised on the terminal step
  double task_return = 0.0;
};

struct EvalReport {
  sim::Task task = sim::Task::LF;
  sim::LayoutFamily layout = sim::LayoutFamily::A;
  std::uint64_t seed = 0;
  std::vector<EpisodeRecord> episodes;
  std::size_t total_steps = 0;

  /// Episodes whose termination reason is `e`.
  std::size_t count(sim::Event e) const;
  std::size_t completed() const { return count(sim::Event::Completed); }
  /// Percent of episodes completed.
  double sr() const;
  /// 100 - sr(); every other termination is an infraction.
  double ir() const { return 100.0 - sr(); }
};

inline constexpr const char* kReportHeader =
    "task,layout,seed,episodes,sr,ir,n_collision,n_offroad,n_wrongdir,n_stall,n_completed";

/// Held-out evaluation geometry for a family, fixed by the eval seed.
sim::TrackLayout eval_layout(sim::LayoutFamily family, std::uint64_t seed, const sim::LayoutParams& params = {});

/// Greedy rollouts of complete episodes until at least `eval_steps` env steps
/// have run. The model and agent are only read.
EvalReport run_eval(model::WorldModel& wm, agent::Agent& agent, sim::Task task, sim::LayoutFamily family,
                    std::size_t eval_steps, std::uint64_t seed, const sim::EnvConfig& env = {},
                    const sim::LayoutParams& params = {});
EvalReport run_eval(pipeline::Trainer& trainer, sim::Task task, sim::LayoutFamily family, std::size_t eval_steps,
                    std::uint64_t seed);

/// One report per (task, layout, seed), in that nesting order.
std::vector<EvalReport> transfer_matrix(pipeline::Trainer& trainer, const std::vector<sim::Task>& tasks,
                                        const std::vector<sim::LayoutFamily>& layouts, std::size_t eval_steps,
                                        const std::vector<std::uint64_t>& seeds);

std::string format_report_row(const EvalReport& r);
/// Header plus one row per report.
std::string format_report_csv(const std::vector<EvalReport>& reports);
void write_report_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);
/// "SR 64.52 / IR 35.48".
std::string format_summary(const EvalReport& r);

enum class FinetuneMode { Zero, Few };
FinetuneMode parse_mode(const std::string& s);

/// Zero-shot: no updates. Few-shot: the trainer's fine-tuning budget on
/// `task` with the ensemble frozen. Then evaluates greedily.
EvalReport finetune_phase(pipeline::Trainer& trainer, sim::Task task, FinetuneMode mode, sim::LayoutFamily family,
                          std::size_t eval_steps, std::uint64_t eval_seed);

}  // namespace drivelab::eval
