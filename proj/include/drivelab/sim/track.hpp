#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace drivelab::sim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

struct Obstacle {
  Vec2 position;
  double radius = 1.0;
  bool operator==(const Obstacle&) const = default;
};

struct Pose {
  Vec2 position;
  double heading = 0.0;
  bool operator==(const Pose&) const = default;
};

enum class LayoutFamily : char { A = 'A', B = 'B' };

/// Closest point on the centerline to a query position.
struct Projection {
  std::size_t segment = 0;
  double arc = 0.0;       // arc length of the closest point from waypoint 0
  double lateral = 0.0;   // signed offset, positive to the left of travel
  double path_heading = 0.0;
  double distance = 0.0;  // |lateral|
};

class LayoutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// World geometry: a single-lane road along a polyline with static obstacles.
/// Travel follows increasing waypoint order when direction is +1.
class TrackLayout {
 public:
  TrackLayout() = default;
  TrackLayout(std::vector<Vec2> centerline, bool closed, double lane_width, double margin,
              std::vector<Obstacle> obstacles, std::vector<Pose> spawns, LayoutFamily family, int direction = 1);

  const std::vector<Vec2>& centerline() const { return centerline_; }
  bool closed() const { return closed_; }
  double lane_width() const { return lane_width_; }
  double margin() const { return margin_; }
  const std::vector<Obstacle>& obstacles() const { return obstacles_; }
  const std::vector<Pose>& spawns() const { return spawns_; }
  LayoutFamily family() const { return family_; }
  int direction() const { return direction_; }
  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  std::size_t segment_count() const { return closed_ ? centerline_.size() : centerline_.size() - 1; }

  /// Half-width of the area that counts as on-road.
  double drivable_half_width() const { return 0.5 * lane_width_ + margin_; }

  Projection project(Vec2 p) const;
  /// Distance to the centerline when it is within `local_radius()`, else +inf.
  double nearby_distance(Vec2 p) const;
  double local_radius() const { return cell_; }
  /// Signed arc-length difference b - a, wrapped on closed tracks.
  double arc_delta(double a, double b) const;

  /// Bounding box of the centerline widened by `extent_pad`; outside is out of range.
  bool in_extent(Vec2 p) const;
  double extent_pad() const { return extent_pad_; }

  /// Validates the geometric invariants; throws LayoutError on violation.
  void validate(double vehicle_half_width = 1.0) const;

  bool operator==(const TrackLayout& o) const {
    return centerline_ == o.centerline_ && closed_ == o.closed_ && lane_width_ == o.lane_width_ &&
           margin_ == o.margin_ && obstacles_ == o.obstacles_ && spawns_ == o.spawns_ && family_ == o.family_ &&
           direction_ == o.direction_;
  }

 private:
  void build_index();
  Vec2 segment_start(std::size_t s) const { return centerline_[s]; }
  Vec2 segment_end(std::size_t s) const { return centerline_[(s + 1) % centerline_.size()]; }
  void closest_on_segment(std::size_t s, Vec2 p, std::size_t& best_s, double& best_u, double& best_d2) const;
  bool search_local(Vec2 p, std::size_t& best_s, double& best_u, double& best_d2) const;

  std::vector<Vec2> centerline_;
  bool closed_ = true;
  double lane_width_ = 4.0;
  double margin_ = 1.0;
  std::vector<Obstacle> obstacles_;
  std::vector<Pose> spawns_;
  LayoutFamily family_ = LayoutFamily::A;
  int direction_ = 1;
  double extent_pad_ = 12.0;

  std::vector<double> cumulative_;
  double min_x_ = 0, min_y_ = 0, max_x_ = 0, max_y_ = 0;
  // Uniform bucket grid over segments for nearest-segment queries.
  double cell_ = 8.0;
  std::size_t grid_w_ = 0, grid_h_ = 0;
  std::vector<std::vector<std::uint32_t>> buckets_;
};

/// Generation knobs for procedurally randomized layouts.
struct LayoutParams {
  double lane_width = 4.0;
  double margin = 1.0;
  /// Multiplies the family's obstacle count range (0 disables obstacles).
  double obstacle_density = 1.0;
};

/// Regenerates obstacle placement/count and curvature from `seed`, keeping the
/// family's curvature statistics. Deterministic in (family, seed, params).
TrackLayout randomize(LayoutFamily family, std::uint64_t seed, const LayoutParams& params = {});

/// Plain-text layout: `WP x y`, `LANEWIDTH w`, `OBS x y r`, plus optional
/// `MARGIN m`, `FAMILY A|B`, `OPEN`, `SPAWN x y heading`; `#` starts a comment.
TrackLayout load_layout(const std::filesystem::path& path);
TrackLayout parse_layout(const std::string& text);
std::string format_layout(const TrackLayout& layout);

LayoutFamily parse_family(const std::string& s);
double wrap_angle(double a);

}  // namespace drivelab::sim
