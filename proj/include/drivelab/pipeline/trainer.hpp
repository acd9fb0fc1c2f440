#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

#include "drivelab/agent/agent.hpp"
#include "drivelab/model/ensemble.hpp"
#include "drivelab/model/rssm.hpp"
#include "drivelab/pipeline/checkpoint.hpp"
#include "drivelab/pipeline/config.hpp"
#include "drivelab/pipeline/metrics.hpp"
#include "drivelab/pipeline/replay.hpp"
#include "drivelab/sim/env.hpp"

namespace drivelab::pipeline {

enum class Phase : std::uint8_t { Explore = 0, Finetune = 1 };
std::string phase_name(Phase p);

/// Posterior filter used to act in the real environment: h advances with the
/// previous latent and action, z comes from the posterior of the new
/// observation (its mean when greedy).
class LatentFilter {
 public:
  LatentFilter(model::WorldModel& wm, agent::Agent& agent);

  void reset();
  std::array<double, 2> act(const sim::EgoObservation& obs, bool greedy, diff::Rng& rng);

  const diff::Tensor& h() const { return h_; }
  const diff::Tensor& z() const { return z_; }
  const std::array<double, 2>& prev_action() const { return prev_; }
  void set_state(diff::Tensor h, diff::Tensor z, std::array<double, 2> prev);

 private:
  model::WorldModel* wm_;
  agent::Agent* agent_;
  diff::Tensor h_, z_;
  std::array<double, 2> prev_{};
};

struct UpdateStats {
  model::ModelLossBreakdown model;
  std::optional<double> loss_ensemble;
  double r_int_mean = 0.0;
  agent::ActorCriticStats ac;
};

struct Counters {
  std::uint64_t env_steps = 0;    // all phases
  std::uint64_t phase_steps = 0;  // env steps in the current phase
  std::uint64_t updates = 0;
  std::uint64_t skipped_updates = 0;  // warm-up not met
  std::uint64_t episodes = 0;
  std::uint64_t chunk_pos = 0;
  std::uint64_t layout_index = 0;
  std::uint64_t since_randomize = 0;
  std::uint64_t pending_layout = 0;  // 1 when a new layout waits for the next reset
  std::uint64_t log_steps = 0;       // env steps since the last metrics row
  std::uint64_t log_updates = 0;     // updates since the last metrics row
  std::uint64_t credited_steps = 0;  // env steps past the prefill
  std::uint64_t consumed_updates = 0;  // updates run or skipped
  bool operator==(const Counters&) const = default;
};

/// Owns every learned component, the replay buffer and the environment, and
/// runs both training phases one env step at a time.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return cfg_; }

  /// Runs until the exploration budget is spent.
  void run_explore();
  /// Switches to few-shot fine-tuning on `task` and runs its budget.
  void run_finetune(sim::Task task);
  void begin_finetune(sim::Task task);
  /// One env step plus any updates that fall due.
  void step();
  /// Runs `n` env steps in the current phase (ignores the phase budget).
  void advance(std::size_t n);
  /// Runs the updates accumulated by a partially filled chunk.
  void flush_updates();

  Phase phase() const { return phase_; }
  sim::Task task() const { return task_; }
  const Counters& counters() const { return counters_; }
  /// Sum of optimizer step counters over every trainable component.
  std::uint64_t optimizer_steps();

  model::WorldModel& world_model() { return wm_; }
  model::Ensemble& ensemble() { return ens_; }
  agent::Agent& agent() { return agent_; }
  diff::Adam& model_optimizer() { return wm_opt_; }
  ReplayBuffer& buffer() { return buffer_; }
  sim::DriveEnv& env() { return env_; }
  const std::optional<UpdateStats>& last_update() const { return last_update_; }
  diff::ParamList all_parameters();

  void set_metrics(std::shared_ptr<MetricsLog> log) { metrics_ = std::move(log); }
  void set_checkpoint_path(std::filesystem::path p) { checkpoint_path_ = std::move(p); }
  /// Called after every env step with the new vehicle state.
  void set_step_observer(std::function<void(const sim::VehicleState&)> f) { observer_ = std::move(f); }

  /// Layout used for the i-th randomization of this run's family.
  static sim::TrackLayout layout_for(const TrainConfig& cfg, std::uint64_t index);

  Checkpoint to_checkpoint();
  void save(const std::filesystem::path& path);
  /// Restores every piece of state. Throws CheckpointError on a fingerprint mismatch.
  static std::unique_ptr<Trainer> from_checkpoint(const Checkpoint& ck, const TrainConfig& cfg);
  static std::unique_ptr<Trainer> load(const std::filesystem::path& path, const TrainConfig& cfg);

 private:
  void start_episode();
  void run_updates();
  UpdateStats update();
  agent::RewardFn imagined_reward();
  double intrinsic_weight() const { return phase_ == Phase::Explore ? cfg_.alpha_explore : cfg_.alpha_finetune; }
  std::size_t budget() const { return phase_ == Phase::Explore ? cfg_.n_explore : cfg_.n_fine; }
  void log_row();
  void restore(const Checkpoint& ck);

  TrainConfig cfg_;
  model::WorldModel wm_;
  model::Ensemble ens_;
  agent::Agent agent_;
  diff::Adam wm_opt_;
  ReplayBuffer buffer_;
  sim::DriveEnv env_;
  LatentFilter filter_;

  diff::Rng update_rng_;
  diff::Rng act_rng_;
  diff::Rng env_rng_;

  Phase phase_ = Phase::Explore;
  sim::Task task_ = sim::Task::LF;
  Counters counters_;
  double log_r_ext_sum_ = 0.0;
  // Running mean of the real-batch intrinsic reward; imagined intrinsic rewards
  // are divided by it. Zero until the first exploration update.
  double r_int_scale_ = 0.0;
  std::array<double, 11> log_sums_{};  // update metrics accumulated since the last row
  std::optional<UpdateStats> last_update_;

  std::shared_ptr<MetricsLog> metrics_;
  std::filesystem::path checkpoint_path_;
  std::function<void(const sim::VehicleState&)> observer_;
};

/// The config a checkpoint was written with.
TrainConfig stored_config(const Checkpoint& ck);

}  // namespace drivelab::pipeline
