#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "routerank/common.hpp"
#include "routerank/roadnet.hpp"
#include "routerank/timeutil.hpp"

namespace routerank {

struct GpsPoint {
  double t = 0.0;  // seconds since epoch
  Vec2 pos;
};

struct Trajectory {
  std::int64_t user_id = 0;
  std::int64_t trip_id = 0;
  Timestamp departure_time = 0;
  std::vector<GpsPoint> points;
};

/// Throws InvalidArgument unless the trajectory has >= 2 points with
/// strictly increasing timestamps.
void validate(const Trajectory& traj);

struct MapMatchConfig {
  double search_radius = 50.0;  // m
  /// Hysteresis: stay on the current link unless a successor is closer by
  /// more than this. Keeps points near an intersection from committing to
  /// the wrong branch.
  double switch_margin = 15.0;  // m
  /// Per-link cost when comparing alternative starting links (m^2).
  double link_penalty = 100.0;
};

struct MatchResult {
  LinkPath path;
  /// For each GPS point, the position in path.links it was assigned to.
  std::vector<std::size_t> point_link;
};

class UnmatchedPointError : public InvalidArgument {
 public:
  UnmatchedPointError(std::size_t point_index, const std::string& what)
      : InvalidArgument(what), point_index_(point_index) {}
  std::size_t point_index() const { return point_index_; }

 private:
  std::size_t point_index_;
};

/// Greedy topological map matching. The first point seeds every link within
/// the search radius; each seed is extended point by point, choosing between
/// the current link and its successors (up to two links ahead, no U-turns).
/// The cheapest complete extension wins.
MatchResult map_match(const Trajectory& traj, const RoadNetwork& network, const MapMatchConfig& config = {});

struct Projection {
  double distance = 0.0;  // to the closest point on the polyline
  double offset = 0.0;    // arc length of the closest point from the start
};

Projection project_onto(std::span<const Vec2> polyline, Vec2 p);

/// 1 - dis_tc / dis_t, where dis_t is the trajectory path length and dis_tc
/// the summed length of links present in both paths (link-id set
/// intersection). Throws on an empty trajectory path.
double inconsistency_rate(const RoadNetwork& network, const LinkPath& traj_path, const LinkPath& candidate);

inline constexpr double kDefaultFollowThreshold = 0.05;

/// 1 when the user followed the route (ir <= tau), else 0.
int binarize_label(double ir, double tau = kDefaultFollowThreshold);

struct IrLabel {
  double ir = 0.0;
  int y = 0;
};

inline IrLabel label(double ir, double tau = kDefaultFollowThreshold) { return {ir, binarize_label(ir, tau)}; }

}  // namespace routerank
