#pragma once

#include <array>
#include <cstdint>

#include "drivelab/sim/track.hpp"
#include "drivelab/sim/vehicle.hpp"

namespace drivelab::sim {

inline constexpr std::size_t kGrid = 32;
inline constexpr std::size_t kCells = kGrid * kGrid;
inline constexpr std::size_t kClasses = 6;
inline constexpr std::size_t kFrames = 4;

enum class CellClass : std::uint8_t { Road = 0, LaneMarking = 1, OffRoad = 2, Obstacle = 3, Ego = 4, OutOfRange = 5 };

/// One egocentric class-id grid, row 0 farthest ahead, column 0 leftmost.
using Frame = std::array<std::uint8_t, kCells>;

struct RenderWindow {
  double ahead = 24.0;
  double behind = 8.0;
  double side = 16.0;
  double ego_half_length = 2.0;
  double ego_half_width = 1.0;
  double marking_half_width = 0.5;
};

/// Orthographic top-down view with the ego heading pointing up.
/// Priority per cell: ego > obstacle > lane marking > road > off-road;
/// cells outside the layout extent are out of range.
Frame render_semantic(const VehicleState& s, const TrackLayout& layout, const RenderWindow& window = {});

/// Row/column of the cells covered by the ego footprint (fixed anchor).
bool is_ego_cell(std::size_t row, std::size_t col, const RenderWindow& window = {});

}  // namespace drivelab::sim
