#pragma once

#include <cstdint>

namespace drivelab::sim {

/// Control in [-1, 1]^2: steer (positive turns left) and accel (negative brakes).
struct Action {
  double steer = 0.0;
  double accel = 0.0;
  bool operator==(const Action&) const = default;
};

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians, wrapped to (-pi, pi]
  double speed = 0.0;    // m/s in [0, v_max]
  bool operator==(const VehicleState&) const = default;
};

struct EnvConfig {
  double dt = 0.1;
  double wheelbase = 2.5;
  double v_max = 15.0;
  double a_max = 3.0;
  double max_steer = 0.5;  // rad
  int horizon = 1000;      // steps until an episode counts as completed
  double stall_speed = 0.3;
  int stall_steps = 100;
  double wrong_way_angle_deg = 120.0;
  int wrong_way_steps = 20;
  double ego_radius = 1.0;
  double vehicle_half_width = 1.0;
  double spawn_speed = 0.0;
  int randomization_period = 2000;
  double lane_width = 4.0;
  double margin = 1.0;
  double obstacle_density = 1.0;
};

/// Kinematic bicycle step. Position integrates the pre-update speed.
VehicleState step_dynamics(const VehicleState& s, Action a, const EnvConfig& cfg);

}  // namespace drivelab::sim
