#include "drivelab/sim/render.hpp"

#include <algorithm>
#include <cmath>

namespace drivelab::sim {

namespace {

struct CellOffset {
  double forward;
  double left;
};

CellOffset cell_offset(std::size_t row, std::size_t col, const RenderWindow& w) {
  const double row_m = (w.ahead + w.behind) / static_cast<double>(kGrid);
  const double col_m = (2.0 * w.side) / static_cast<double>(kGrid);
  return {w.ahead - (static_cast<double>(row) + 0.5) * row_m, w.side - (static_cast<double>(col) + 0.5) * col_m};
}

}  // namespace

bool is_ego_cell(std::size_t row, std::size_t col, const RenderWindow& window) {
  const CellOffset o = cell_offset(row, col, window);
  return std::abs(o.forward) <= window.ego_half_length && std::abs(o.left) <= window.ego_half_width;
}

Frame render_semantic(const VehicleState& s, const TrackLayout& layout, const RenderWindow& window) {
  Frame frame{};
  const double c = std::cos(s.heading), sn = std::sin(s.heading);
  const double half_lane = 0.5 * layout.lane_width();
  const double drivable = layout.drivable_half_width();
  // Beyond the local search radius a cell can only be off-road.
  const bool local_ok = std::max(drivable, half_lane + window.marking_half_width) < layout.local_radius();
  for (std::size_t row = 0; row < kGrid; ++row) {
    for (std::size_t col = 0; col < kGrid; ++col) {
      const CellOffset o = cell_offset(row, col, window);
      CellClass cls;
      if (std::abs(o.forward) <= window.ego_half_length && std::abs(o.left) <= window.ego_half_width) {
        cls = CellClass::Ego;
      } else {
        const Vec2 p{s.x + o.forward * c - o.left * sn, s.y + o.forward * sn + o.left * c};
        bool obstacle = false;
        for (const Obstacle& ob : layout.obstacles()) {
          const double dx = p.x - ob.position.x, dy = p.y - ob.position.y;
          if (dx * dx + dy * dy <= ob.radius * ob.radius) {
            obstacle = true;
            break;
          }
        }
        if (obstacle) {
          cls = CellClass::Obstacle;
        } else if (!layout.in_extent(p)) {
          cls = CellClass::OutOfRange;
        } else {
          const double d = local_ok ? layout.nearby_distance(p) : layout.project(p).distance;
          if (std::abs(d - half_lane) <= window.marking_half_width) {
            cls = CellClass::LaneMarking;
          } else if (d <= drivable) {
            cls = CellClass::Road;
          } else {
            cls = CellClass::OffRoad;
          }
        }
      }
      frame[row * kGrid + col] = static_cast<std::uint8_t>(cls);
    }
  }
  return frame;
}

}  // namespace drivelab::sim
