#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "drivelab/sim/render.hpp"
#include "drivelab/sim/track.hpp"
#include "drivelab/sim/vehicle.hpp"

namespace drivelab::sim {

enum class Task : std::uint8_t { LF = 0, CA = 1, LF_CA = 2 };
inline constexpr std::size_t kNumTasks = 3;

Task parse_task(const std::string& s);
std::string task_name(Task t);

/// Termination events, declared in priority order (highest first).
enum class Event : std::uint8_t { Collision = 0, OffRoad = 1, WrongDirection = 2, Stall = 3, Completed = 4 };
inline constexpr std::size_t kNumEvents = 5;

std::string event_name(Event e);

class EventSet {
 public:
  void insert(Event e) { bits_ |= static_cast<std::uint8_t>(1u << static_cast<unsigned>(e)); }
  bool contains(Event e) const { return (bits_ >> static_cast<unsigned>(e)) & 1u; }
  bool empty() const { return bits_ == 0; }
  std::uint8_t bits() const { return bits_; }
  /// Highest-priority event; requires !empty().
  Event reason() const;
  bool operator==(const EventSet&) const = default;

 private:
  std::uint8_t bits_ = 0;
};

/// Consecutive-step counters carried between detect_events calls.
struct EventHistory {
  int stall_steps = 0;
  int wrong_way_steps = 0;
  bool operator==(const EventHistory&) const = default;
};

/// Updates `history` with state `s` at step `t` (1-based count of steps taken).
EventSet detect_events(const VehicleState& s, EventHistory& history, const TrackLayout& layout, const EnvConfig& cfg,
                       int t);

/// `progress` is the signed forward arc length covered this step.
double extrinsic_reward(Task task, const VehicleState& s, double progress, const EventSet& events,
                        const TrackLayout& layout, const EnvConfig& cfg);

struct EgoObservation {
  std::array<Frame, kFrames> frames{};  // oldest first
  double speed_norm = 0.0;
  double prev_steer = 0.0;
  bool operator==(const EgoObservation&) const = default;
};

struct StepOutcome {
  EgoObservation obs;
  std::array<double, kNumTasks> r_ext{};
  EventSet events;
  bool terminated = false;
  Event reason = Event::Completed;  // meaningful only when terminated
};

/// Everything needed to resume an episode bitwise.
struct EnvState {
  VehicleState vehicle;
  EventHistory history;
  int t = 0;
  double arc = 0.0;
  EgoObservation obs;
  bool done = true;
  bool operator==(const EnvState&) const = default;
};

class DriveEnv {
 public:
  DriveEnv(TrackLayout layout, EnvConfig cfg = {});

  /// Spawns at a seeded spawn pose and fills the stack with 4 copies of the first frame.
  const EgoObservation& reset(std::uint64_t seed);
  /// Resets at an explicit pose, e.g. for tests and hand-built scenarios.
  const EgoObservation& reset_at(const VehicleState& s);
  StepOutcome step(Action action);

  /// Swaps the world; takes effect from the next reset.
  void set_layout(TrackLayout layout) { layout_ = std::move(layout); }
  const TrackLayout& layout() const { return layout_; }
  const EnvConfig& config() const { return cfg_; }
  const VehicleState& vehicle() const { return state_.vehicle; }
  const EgoObservation& observation() const { return state_.obs; }
  int t() const { return state_.t; }
  bool done() const { return state_.done; }

  const EnvState& state() const { return state_; }
  void set_state(const EnvState& s) { state_ = s; }

 private:
  TrackLayout layout_;
  EnvConfig cfg_;
  EnvState state_;
};

}  // namespace drivelab::sim
