#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include "drivelab/diff/rng.hpp"
#include "drivelab/model/rssm.hpp"
#include "drivelab/sim/env.hpp"

namespace drivelab::pipeline {

/// One step of an episode. `action` is the action that led to `obs` (zero on
/// the reset step); r_ext and cont describe the arrival at `obs`.
struct TransitionRecord {
  sim::EgoObservation obs;
  std::array<double, 2> action{};
  std::array<double, sim::kNumTasks> r_ext{};
  bool cont = true;
  std::uint64_t episode = 0;
  std::uint32_t step = 0;
};

/// Raised by sample_batch before enough data has been collected.
class WarmupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SequenceRef {
  std::size_t episode;  // index into episodes(), oldest first
  std::size_t offset;
  bool operator==(const SequenceRef&) const = default;
};

/// Episode-segmented store. Only the newest frame of each observation is kept;
/// frame stacks are rebuilt from the preceding steps of the same episode (the
/// reset step repeats its frame, as the environment does).
class ReplayBuffer {
 public:
  struct Step {
    sim::Frame frame;
    double speed_norm;
    double prev_steer;
    std::array<double, 2> action;
    std::array<double, sim::kNumTasks> r_ext;
    bool cont;
  };
  struct Episode {
    std::uint64_t id;
    std::vector<Step> steps;
  };

  explicit ReplayBuffer(std::size_t capacity = 100000);

  /// Opens a new episode with its reset observation.
  void begin_episode(const sim::EgoObservation& obs);
  /// Appends to the open episode. The episode stays open for sampling.
  void append(const sim::EgoObservation& obs, std::array<double, 2> action,
              const std::array<double, sim::kNumTasks>& r_ext, bool cont);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return size_ == 0; }
  const std::deque<Episode>& episodes() const { return episodes_; }
  std::uint64_t next_episode_id() const { return next_id_; }

  TransitionRecord record(std::size_t episode, std::size_t step) const;
  sim::EgoObservation observation(std::size_t episode, std::size_t step) const;

  /// Number of (episode, offset) pairs that fit a length-L window.
  std::size_t valid_windows(std::size_t length) const;
  /// B windows drawn uniformly over all valid (episode, offset) pairs.
  std::vector<SequenceRef> sample(std::size_t batch, std::size_t length, diff::Rng& rng) const;

  /// Time-major batch. Reward targets come from `task`'s column, or are zero
  /// when no task is given.
  model::SequenceBatch assemble(const std::vector<SequenceRef>& refs, std::size_t length,
                                std::optional<sim::Task> task) const;

  void clear();
  /// Rebuilds from raw parts (checkpoint restore).
  void restore(std::deque<Episode> episodes, std::uint64_t next_id);

 private:
  void evict();

  std::size_t capacity_;
  std::size_t size_ = 0;
  std::uint64_t next_id_ = 0;
  std::deque<Episode> episodes_;
};

/// sample + assemble. Throws WarmupError when no episode is long enough.
model::SequenceBatch sample_batch(const ReplayBuffer& buffer, std::size_t batch, std::size_t length, diff::Rng& rng,
                                  std::optional<sim::Task> task);

}  // namespace drivelab::pipeline
