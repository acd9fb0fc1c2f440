#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "drivelab/agent/agent.hpp"
#include "drivelab/model/ensemble.hpp"
#include "drivelab/model/rssm.hpp"
#include "drivelab/sim/env.hpp"
#include "drivelab/sim/track.hpp"
#include "drivelab/sim/vehicle.hpp"

namespace drivelab::pipeline {

/// Raised for malformed config text, unknown keys or invalid values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  // train.lr_policy, train.lr_value and train.gamma are stored in `agent`,
  // train.lr_ensemble in `ensemble`.
  double lr_model = 1e-4;
  std::size_t batch = 64;
  std::size_t seq_len = 50;
  std::size_t capacity = 100000;
  /// Intrinsic reward weights per phase; the extrinsic weight is 1 - alpha.
  double alpha_explore = 1.0;
  double alpha_finetune = 0.0;
  std::size_t n_explore = 30000;
  std::size_t n_fine = 3000;
  std::size_t chunk = 1000;
  double train_ratio = 0.2;           // updates per env step while exploring
  double train_ratio_finetune = 0.2;  // updates per env step while fine-tuning
  /// Env steps collected before the first update.
  std::size_t prefill = 1000;
  /// Imagination start states per update, evenly strided over the batch
  /// posterior states; 0 uses all of them.
  std::size_t imagine_starts = 0;
  double grad_clip = 100.0;
  std::size_t log_every = 1000;
  std::size_t checkpoint_every = 0;  // env steps; 0 disables periodic checkpoints
  std::uint64_t seed = 0;
  /// Task whose extrinsic reward is logged, and the default fine-tuning task.
  sim::Task task = sim::Task::LF;
  /// Greedy evaluation budget in env steps, and its seed.
  std::size_t eval_steps = 10000;
  std::uint64_t eval_seed = 0;

  sim::LayoutFamily family = sim::LayoutFamily::A;
  std::uint64_t layout_seed = 0;
  sim::EnvConfig env;
  model::ModelConfig model = default_model();
  model::EnsembleConfig ensemble;
  agent::AgentConfig agent = default_agent();

  static model::ModelConfig default_model();
  static agent::AgentConfig default_agent();
  void validate() const;
  sim::LayoutParams layout_params() const;

  /// Every key with its current value, one `key = value` per line.
  std::string to_text() const;
  /// Stable hash of the keys that determine parameter shapes.
  std::uint64_t fingerprint() const;
  std::vector<std::string> keys() const;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
};

/// Applies `key = value` lines on top of `base`. `#` starts a comment.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull);

}  // namespace drivelab::pipeline
