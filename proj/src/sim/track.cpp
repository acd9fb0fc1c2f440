#include "drivelab/sim/track.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "drivelab/diff/rng.hpp"

namespace drivelab::sim {

namespace {

constexpr double kPi = std::numbers::pi;

double dist2(Vec2 a, Vec2 b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

struct FamilySpec {
  double base_radius;
  int lobes;
  double amp_lo, amp_hi;
  int second_lobes;
  double amp2_hi;
  int obstacles_lo, obstacles_hi;
};

FamilySpec family_spec(LayoutFamily f) {
  if (f == LayoutFamily::A) return {45.0, 3, 0.08, 0.16, 2, 0.04, 3, 5};
  return {38.0, 5, 0.06, 0.12, 3, 0.06, 5, 8};
}

}  // namespace

double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

LayoutFamily parse_family(const std::string& s) {
  if (s == "A" || s == "a") return LayoutFamily::A;
  if (s == "B" || s == "b") return LayoutFamily::B;
  throw LayoutError("unknown layout family '" + s + "' (expected A or B)");
}

TrackLayout::TrackLayout(std::vector<Vec2> centerline, bool closed, double lane_width, double margin,
                         std::vector<Obstacle> obstacles, std::vector<Pose> spawns, LayoutFamily family,
                         int direction)
    : centerline_(std::move(centerline)),
      closed_(closed),
      lane_width_(lane_width),
      margin_(margin),
      obstacles_(std::move(obstacles)),
      spawns_(std::move(spawns)),
      family_(family),
      direction_(direction >= 0 ? 1 : -1) {
  if (centerline_.size() < 2) throw LayoutError("layout needs at least two waypoints");
  if (lane_width_ <= 0.0 || margin_ < 0.0) throw LayoutError("lane width must be positive and margin non-negative");
  build_index();
  if (spawns_.empty()) {
    const Vec2 a = centerline_[0], b = centerline_[1];
    double h = std::atan2(b.y - a.y, b.x - a.x);
    if (direction_ < 0) h = wrap_angle(h + kPi);
    spawns_.push_back({a, h});
  }
}

void TrackLayout::build_index() {
  cumulative_.assign(1, 0.0);
  for (std::size_t s = 0; s < segment_count(); ++s) {
    cumulative_.push_back(cumulative_.back() + std::sqrt(dist2(segment_start(s), segment_end(s))));
  }
  min_x_ = max_x_ = centerline_[0].x;
  min_y_ = max_y_ = centerline_[0].y;
  for (const Vec2& p : centerline_) {
    min_x_ = std::min(min_x_, p.x);
    max_x_ = std::max(max_x_, p.x);
    min_y_ = std::min(min_y_, p.y);
    max_y_ = std::max(max_y_, p.y);
  }
  min_x_ -= extent_pad_;
  min_y_ -= extent_pad_;
  max_x_ += extent_pad_;
  max_y_ += extent_pad_;
  grid_w_ = static_cast<std::size_t>(std::ceil((max_x_ - min_x_) / cell_)) + 1;
  grid_h_ = static_cast<std::size_t>(std::ceil((max_y_ - min_y_) / cell_)) + 1;
  buckets_.assign(grid_w_ * grid_h_, {});
  for (std::size_t s = 0; s < segment_count(); ++s) {
    const Vec2 a = segment_start(s), b = segment_end(s);
    const auto x0 = static_cast<std::size_t>((std::min(a.x, b.x) - min_x_) / cell_);
    const auto x1 = static_cast<std::size_t>((std::max(a.x, b.x) - min_x_) / cell_);
    const auto y0 = static_cast<std::size_t>((std::min(a.y, b.y) - min_y_) / cell_);
    const auto y1 = static_cast<std::size_t>((std::max(a.y, b.y) - min_y_) / cell_);
    for (std::size_t gy = y0; gy <= y1 && gy < grid_h_; ++gy) {
      for (std::size_t gx = x0; gx <= x1 && gx < grid_w_; ++gx) {
        buckets_[gy * grid_w_ + gx].push_back(static_cast<std::uint32_t>(s));
      }
    }
  }
}

void TrackLayout::closest_on_segment(std::size_t s, Vec2 p, std::size_t& best_s, double& best_u,
                                     double& best_d2) const {
  const Vec2 a = segment_start(s), b = segment_end(s);
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double u = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  const Vec2 q{a.x + u * dx, a.y + u * dy};
  const double d2 = dist2(p, q);
  if (d2 < best_d2 || (d2 == best_d2 && s < best_s)) {
    best_d2 = d2;
    best_s = s;
    best_u = u;
  }
}

bool TrackLayout::search_local(Vec2 p, std::size_t& best_s, double& best_u, double& best_d2) const {
  const double fx = (p.x - min_x_) / cell_;
  const double fy = (p.y - min_y_) / cell_;
  if (!(fx >= 0.0 && fy >= 0.0 && fx < static_cast<double>(grid_w_) && fy < static_cast<double>(grid_h_))) return false;
  const auto gx = static_cast<std::ptrdiff_t>(fx);
  const auto gy = static_cast<std::ptrdiff_t>(fy);
  for (std::ptrdiff_t y = gy - 1; y <= gy + 1; ++y) {
    for (std::ptrdiff_t x = gx - 1; x <= gx + 1; ++x) {
      if (x < 0 || y < 0 || x >= static_cast<std::ptrdiff_t>(grid_w_) || y >= static_cast<std::ptrdiff_t>(grid_h_))
        continue;
      for (std::uint32_t s : buckets_[static_cast<std::size_t>(y) * grid_w_ + static_cast<std::size_t>(x)]) {
        closest_on_segment(s, p, best_s, best_u, best_d2);
      }
    }
  }
  // Anything closer than one bucket width is guaranteed to be in the 3x3 neighbourhood.
  return best_d2 <= cell_ * cell_;
}

Projection TrackLayout::project(Vec2 p) const {
  std::size_t s = 0;
  double u = 0.0;
  double d2 = std::numeric_limits<double>::infinity();
  if (!search_local(p, s, u, d2)) {
    d2 = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < segment_count(); ++k) closest_on_segment(k, p, s, u, d2);
  }
  const Vec2 a = segment_start(s), b = segment_end(s);
  const double dx = b.x - a.x, dy = b.y - a.y;
  Projection out;
  out.segment = s;
  out.arc = cumulative_[s] + u * std::sqrt(dx * dx + dy * dy);
  double heading = std::atan2(dy, dx);
  // Cross product sign: positive when p lies to the left of a->b.
  double side = dx * (p.y - a.y) - dy * (p.x - a.x);
  if (direction_ < 0) {
    heading = wrap_angle(heading + kPi);
    side = -side;
  }
  out.path_heading = heading;
  out.distance = std::sqrt(d2);
  out.lateral = side >= 0.0 ? out.distance : -out.distance;
  return out;
}

double TrackLayout::nearby_distance(Vec2 p) const {
  std::size_t s = 0;
  double u = 0.0;
  double d2 = std::numeric_limits<double>::infinity();
  if (!search_local(p, s, u, d2)) return std::numeric_limits<double>::infinity();
  return std::sqrt(d2);
}

double TrackLayout::arc_delta(double a, double b) const {
  double d = b - a;
  if (closed_) {
    const double len = length();
    d = std::fmod(d, len);
    if (d > 0.5 * len) d -= len;
    if (d <= -0.5 * len) d += len;
  }
  return d * direction_;
}

bool TrackLayout::in_extent(Vec2 p) const { return p.x >= min_x_ && p.x <= max_x_ && p.y >= min_y_ && p.y <= max_y_; }

void TrackLayout::validate(double vehicle_half_width) const {
  for (std::size_t s = 0; s < segment_count(); ++s) {
    const double len = std::sqrt(dist2(segment_start(s), segment_end(s)));
    if (len < 1.0 || len > 5.0) {
      throw LayoutError("waypoint spacing " + std::to_string(len) + " m at segment " + std::to_string(s) +
                        " outside [1, 5] m");
    }
  }
  if (lane_width_ <= 2.0 * vehicle_half_width) throw LayoutError("lane narrower than the vehicle");
  for (const Obstacle& o : obstacles_) {
    if (o.radius <= 0.0) throw LayoutError("obstacle radius must be positive");
    if (project(o.position).distance > drivable_half_width()) throw LayoutError("obstacle outside the drivable area");
  }
}

TrackLayout randomize(LayoutFamily family, std::uint64_t seed, const LayoutParams& params) {
  const FamilySpec spec = family_spec(family);
  diff::Rng rng(seed * 2654435761ULL + (family == LayoutFamily::A ? 17 : 29));
  const double amp = rng.uniform(spec.amp_lo, spec.amp_hi);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const double amp2 = rng.uniform(0.0, spec.amp2_hi);
  const double phase2 = rng.uniform(0.0, 2.0 * kPi);

  // Dense polar curve, then resample at uniform arc length.
  const int dense = 4000;
  std::vector<Vec2> fine(dense);
  for (int i = 0; i < dense; ++i) {
    const double th = 2.0 * kPi * i / dense;
    const double r = spec.base_radius *
                     (1.0 + amp * std::sin(spec.lobes * th + phase) + amp2 * std::sin(spec.second_lobes * th + phase2));
    fine[i] = {r * std::cos(th), r * std::sin(th)};
  }
  std::vector<double> cum(dense + 1, 0.0);
  for (int i = 0; i < dense; ++i) cum[i + 1] = cum[i] + std::sqrt(dist2(fine[i], fine[(i + 1) % dense]));
  const double total = cum.back();
  const auto n = static_cast<std::size_t>(std::round(total / 2.0));
  std::vector<Vec2> wps;
  wps.reserve(n);
  std::size_t j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double target = total * static_cast<double>(k) / static_cast<double>(n);
    while (cum[j + 1] < target) ++j;
    const double u = (target - cum[j]) / (cum[j + 1] - cum[j]);
    const Vec2 a = fine[j], b = fine[(j + 1) % dense];
    wps.push_back({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)});
  }

  // Obstacles spread around the loop, one per sector.
  const int lo = static_cast<int>(std::round(spec.obstacles_lo * params.obstacle_density));
  const int hi = static_cast<int>(std::round(spec.obstacles_hi * params.obstacle_density));
  const int count = lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1)));
  TrackLayout skeleton(wps, true, params.lane_width, params.margin, {}, {}, family);
  const double loop = skeleton.length();
  auto point_at = [&](double arc, double lateral) {
    arc = std::fmod(arc + loop, loop);
    const double spacing = loop / static_cast<double>(wps.size());
    const auto s = std::min(static_cast<std::size_t>(arc / spacing), wps.size() - 1);
    const double u = (arc - spacing * static_cast<double>(s)) / spacing;
    const Vec2 a = wps[s], b = wps[(s + 1) % wps.size()];
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len = std::hypot(dx, dy);
    const Vec2 base{a.x + u * dx, a.y + u * dy};
    return Pose{{base.x - lateral * dy / len, base.y + lateral * dx / len}, std::atan2(dy, dx)};
  };
  std::vector<Obstacle> obstacles;
  std::vector<double> obstacle_arcs;
  const double start_clear = 30.0;  // keep the first stretch free for the default spawn
  for (int k = 0; k < count; ++k) {
    const double sector = (loop - start_clear) / count;
    const double arc = start_clear + sector * (k + rng.uniform(0.2, 0.8));
    const double lateral = rng.uniform(-1.2, 1.2);
    const double radius = rng.uniform(0.8, 1.2);
    obstacles.push_back({point_at(arc, lateral).position, radius});
    obstacle_arcs.push_back(arc);
  }

  std::vector<Pose> spawns;
  const int spawn_slots = 8;
  for (int k = 0; k < spawn_slots; ++k) {
    const double arc = loop * k / spawn_slots;
    bool clear = true;
    for (double oa : obstacle_arcs) {
      double ahead = std::fmod(oa - arc + loop, loop);
      if (ahead < 25.0 || ahead > loop - 8.0) clear = false;
    }
    if (clear) spawns.push_back(point_at(arc, 0.0));
  }
  if (spawns.empty()) spawns.push_back(point_at(0.0, 0.0));

  TrackLayout layout(std::move(wps), true, params.lane_width, params.margin, std::move(obstacles), std::move(spawns),
                     family);
  layout.validate();
  return layout;
}

TrackLayout parse_layout(const std::string& text) {
  std::vector<Vec2> wps;
  std::vector<Obstacle> obstacles;
  std::vector<Pose> spawns;
  double lane_width = 4.0, margin = 1.0;
  bool closed = true;
  LayoutFamily family = LayoutFamily::A;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    auto fail = [&](const std::string& why) {
      return LayoutError("layout line " + std::to_string(lineno) + ": " + why);
    };
    auto read = [&](double& v) {
      if (!(ls >> v)) throw fail("expected a number after " + key);
    };
    if (key == "WP") {
      Vec2 p;
      read(p.x);
      read(p.y);
      wps.push_back(p);
    } else if (key == "LANEWIDTH") {
      read(lane_width);
    } else if (key == "MARGIN") {
      read(margin);
    } else if (key == "OBS") {
      Obstacle o;
      read(o.position.x);
      read(o.position.y);
      read(o.radius);
      obstacles.push_back(o);
    } else if (key == "SPAWN") {
      Pose p;
      read(p.position.x);
      read(p.position.y);
      read(p.heading);
      spawns.push_back(p);
    } else if (key == "FAMILY") {
      std::string f;
      if (!(ls >> f)) throw fail("expected A or B");
      family = parse_family(f);
    } else if (key == "OPEN") {
      closed = false;
    } else {
      throw fail("unknown directive '" + key + "'");
    }
    std::string extra;
    if (ls >> extra) throw fail("trailing token '" + extra + "'");
  }
  return TrackLayout(std::move(wps), closed, lane_width, margin, std::move(obstacles), std::move(spawns), family);
}

TrackLayout load_layout(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw LayoutError("cannot open layout file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_layout(ss.str());
}

std::string format_layout(const TrackLayout& layout) {
  std::ostringstream out;
  out.precision(17);
  out << "FAMILY " << static_cast<char>(layout.family()) << "\n";
  out << "LANEWIDTH " << layout.lane_width() << "\n";
  out << "MARGIN " << layout.margin() << "\n";
  if (!layout.closed()) out << "OPEN\n";
  for (const Vec2& p : layout.centerline()) out << "WP " << p.x << " " << p.y << "\n";
  for (const Obstacle& o : layout.obstacles()) out << "OBS " << o.position.x << " " << o.position.y << " " << o.radius << "\n";
  for (const Pose& s : layout.spawns()) out << "SPAWN " << s.position.x << " " << s.position.y << " " << s.heading << "\n";
  return out.str();
}

}  // namespace drivelab::sim
