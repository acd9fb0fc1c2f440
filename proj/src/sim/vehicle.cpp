#include "drivelab/sim/vehicle.hpp"

#include <algorithm>
#include <cmath>

#include "drivelab/sim/track.hpp"

namespace drivelab::sim {

VehicleState step_dynamics(const VehicleState& s, Action a, const EnvConfig& cfg) {
  const double steer = std::clamp(a.steer, -1.0, 1.0) * cfg.max_steer;
  const double accel = std::clamp(a.accel, -1.0, 1.0) * cfg.a_max;
  VehicleState n = s;
  n.x = s.x + s.speed * std::cos(s.heading) * cfg.dt;
  n.y = s.y + s.speed * std::sin(s.heading) * cfg.dt;
  n.heading = wrap_angle(s.heading + (s.speed / cfg.wheelbase) * std::tan(steer) * cfg.dt);
  n.speed = std::clamp(s.speed + accel * cfg.dt, 0.0, cfg.v_max);
  return n;
}

}  // namespace drivelab::sim
