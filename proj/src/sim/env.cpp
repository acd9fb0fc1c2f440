#include "drivelab/sim/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "drivelab/diff/rng.hpp"

namespace drivelab::sim {

Task parse_task(const std::string& s) {
  if (s == "LF" || s == "lf") return Task::LF;
  if (s == "CA" || s == "ca") return Task::CA;
  if (s == "LF+CA" || s == "LF_CA" || s == "lf+ca" || s == "lf_ca") return Task::LF_CA;
  throw std::invalid_argument("unknown task '" + s + "' (expected LF, CA or LF+CA)");
}

std::string task_name(Task t) {
  switch (t) {
    case Task::LF:
      return "LF";
    case Task::CA:
      return "CA";
    case Task::LF_CA:
      return "LF+CA";
  }
  throw std::invalid_argument("unknown task id " + std::to_string(static_cast<int>(t)));
}

std::string event_name(Event e) {
  switch (e) {
    case Event::Collision:
      return "collision";
    case Event::OffRoad:
      return "off_road";
    case Event::WrongDirection:
      return "wrong_direction";
    case Event::Stall:
      return "stall";
    case Event::Completed:
      return "completed";
  }
  return "unknown";
}

Event EventSet::reason() const {
  for (std::size_t i = 0; i < kNumEvents; ++i) {
    const auto e = static_cast<Event>(i);
    if (contains(e)) return e;
  }
  throw std::logic_error("EventSet::reason on an empty set");
}

EventSet detect_events(const VehicleState& s, EventHistory& history, const TrackLayout& layout, const EnvConfig& cfg,
                       int t) {
  EventSet ev;
  for (const Obstacle& o : layout.obstacles()) {
    const double dx = s.x - o.position.x, dy = s.y - o.position.y;
    const double reach = cfg.ego_radius + o.radius;
    if (dx * dx + dy * dy < reach * reach) {
      ev.insert(Event::Collision);
      break;
    }
  }
  const Projection proj = layout.project({s.x, s.y});
  if (proj.distance > layout.drivable_half_width()) ev.insert(Event::OffRoad);

  const double err = std::abs(wrap_angle(s.heading - proj.path_heading));
  const double limit = cfg.wrong_way_angle_deg * std::numbers::pi / 180.0;
  history.wrong_way_steps = err > limit ? history.wrong_way_steps + 1 : 0;
  if (history.wrong_way_steps >= cfg.wrong_way_steps) ev.insert(Event::WrongDirection);

  history.stall_steps = s.speed < cfg.stall_speed ? history.stall_steps + 1 : 0;
  if (history.stall_steps >= cfg.stall_steps) ev.insert(Event::Stall);

  if (ev.empty() && t >= cfg.horizon) ev.insert(Event::Completed);
  return ev;
}

double extrinsic_reward(Task task, const VehicleState& s, double progress, const EventSet& events,
                        const TrackLayout& layout, const EnvConfig& cfg) {
  double lf = 0.0, ca = 0.0;
  const bool want_lf = task == Task::LF || task == Task::LF_CA;
  const bool want_ca = task == Task::CA || task == Task::LF_CA;
  if (!want_lf && !want_ca) throw std::invalid_argument("unknown task id " + std::to_string(static_cast<int>(task)));
  if (want_lf) {
    const Projection proj = layout.project({s.x, s.y});
    const double psi = wrap_angle(s.heading - proj.path_heading);
    const double lane = std::max(0.0, 1.0 - proj.distance / (0.5 * layout.lane_width()));
    lf = (s.speed / cfg.v_max) * std::cos(psi) * lane;
    if (events.contains(Event::OffRoad) || events.contains(Event::WrongDirection)) lf -= 10.0;
  }
  if (want_ca) {
    ca = 0.05 * progress;
    if (events.contains(Event::Collision)) ca -= 10.0;
  }
  double r = lf + ca;
  if (events.contains(Event::Completed)) r += 10.0;
  return r;
}

DriveEnv::DriveEnv(TrackLayout layout, EnvConfig cfg) : layout_(std::move(layout)), cfg_(cfg) {}

const EgoObservation& DriveEnv::reset(std::uint64_t seed) {
  diff::Rng rng(seed);
  const auto& spawns = layout_.spawns();
  const Pose& p = spawns[rng.index(spawns.size())];
  return reset_at({p.position.x, p.position.y, wrap_angle(p.heading), std::clamp(cfg_.spawn_speed, 0.0, cfg_.v_max)});
}

const EgoObservation& DriveEnv::reset_at(const VehicleState& s) {
  state_ = EnvState{};
  state_.vehicle = s;
  state_.arc = layout_.project({s.x, s.y}).arc;
  state_.obs.frames.fill(render_semantic(s, layout_));
  state_.obs.speed_norm = s.speed / cfg_.v_max;
  state_.obs.prev_steer = 0.0;
  state_.done = false;
  return state_.obs;
}

StepOutcome DriveEnv::step(Action action) {
  if (state_.done) throw std::logic_error("DriveEnv::step called on a finished episode; call reset first");
  action.steer = std::clamp(action.steer, -1.0, 1.0);
  action.accel = std::clamp(action.accel, -1.0, 1.0);
  state_.vehicle = step_dynamics(state_.vehicle, action, cfg_);
  state_.t += 1;

  const VehicleState& s = state_.vehicle;
  const double arc = layout_.project({s.x, s.y}).arc;
  const double progress = layout_.arc_delta(state_.arc, arc);
  state_.arc = arc;

  StepOutcome out;
  out.events = detect_events(s, state_.history, layout_, cfg_, state_.t);
  for (std::size_t k = 0; k < kNumTasks; ++k) {
    out.r_ext[k] = extrinsic_reward(static_cast<Task>(k), s, progress, out.events, layout_, cfg_);
  }
  out.terminated = !out.events.empty();
  if (out.terminated) out.reason = out.events.reason();
  state_.done = out.terminated;

  auto& frames = state_.obs.frames;
  std::rotate(frames.begin(), frames.begin() + 1, frames.end());
  frames.back() = render_semantic(s, layout_);
  state_.obs.speed_norm = s.speed / cfg_.v_max;
  state_.obs.prev_steer = action.steer;
  out.obs = state_.obs;
  return out;
}

}  // namespace drivelab::sim
