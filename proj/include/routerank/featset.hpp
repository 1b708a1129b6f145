#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "routerank/roadnet.hpp"
#include "routerank/timeutil.hpp"

namespace routerank {

enum class CongestionLevel : std::uint8_t { kFree = 0, kSlow = 1, kCongested = 2, kSevere = 3 };
inline constexpr int kNumCongestionLevels = 4;

/// Congestion level of every link (by dense link index) at departure time.
struct TrafficSnapshot {
  std::vector<CongestionLevel> level;

  static TrafficSnapshot free_flow(const RoadNetwork& net) {
    return {std::vector<CongestionLevel>(net.links().size(), CongestionLevel::kFree)};
  }
};

struct FeatureConfig {
  /// Speed multiplier per congestion level {free, slow, congested, severe}.
  std::array<double, kNumCongestionLevels> speed_factor{1.0, 0.7, 0.45, 0.25};
  double turn_threshold_deg = 45.0;
  std::size_t max_seq_len = 64;
  /// Peak windows [start_hour, end_hour) in local time.
  std::array<std::pair<int, int>, 2> peak_windows{{{7, 9}, {17, 19}}};
  /// Append per-request relative columns (eta ratio, distance ratio, toll
  /// excess over the cheapest candidate) to the dense vector.
  bool request_relative = true;
};

bool is_peak_hour(int hour, const FeatureConfig& cfg = {});

/// Link traversal time under the given congestion level.
double link_travel_time(const Link& link, CongestionLevel level, const FeatureConfig& cfg = {});

/// Global route features. Field order matches dense().
struct RouteFeatures {
  double distance = 0.0;  // m
  double eta = 0.0;       // s
  double toll = 0.0;
  double n_lights = 0.0;
  double n_turns = 0.0;
  std::array<double, kNumCongestionLevels> congestion_frac{};
  double highway_frac = 0.0;
  double avg_lanes = 0.0;
  double water_frac = 0.0;
  double green_frac = 0.0;
  std::array<double, kNumPoiCategories> poi_vec{};
  double is_peak = 0.0;
  double is_weekend = 0.0;
  // sparse
  int day_of_week = 0;
  int hour_of_day = 0;

  std::vector<double> dense() const;
  static RouteFeatures from_dense(std::span<const double> dense, int day_of_week, int hour_of_day);
};

inline constexpr std::size_t kRouteDenseDim = 23;
inline constexpr std::size_t kRequestRelativeDim = 3;

std::span<const std::string_view> route_dense_names();

RouteFeatures extract_route_features(const LinkPath& path, const RoadNetwork& network, const GridIndex& grid,
                                     const TrafficSnapshot& traffic, Timestamp departure_time,
                                     const FeatureConfig& cfg = {});

/// Relative columns for each candidate of one request:
/// {eta / min eta, distance / min distance, toll - min toll}.
std::vector<std::array<double, kRequestRelativeDim>> request_relative_features(
    std::span<const RouteFeatures> candidates);

/// Per-step link attributes, truncated or zero-padded to max_len.
struct LinkSeqFeatures {
  static constexpr LinkId kPaddingId = -1;

  std::vector<LinkId> link_ids;
  std::vector<double> length;  // m
  std::vector<int> lanes;
  std::vector<int> road_class;
  std::vector<int> congestion;
  std::vector<std::uint8_t> mask;

  std::size_t max_len() const { return mask.size(); }
  /// Number of real (unpadded) steps.
  std::size_t steps() const;

  /// Numeric step vector: length km, lanes, road class one-hot(4),
  /// congestion one-hot(4). Padded steps yield zeros.
  void step_numeric(std::size_t step, std::span<double> out) const;
};

inline constexpr std::size_t kStepNumericDim = 10;

LinkSeqFeatures link_sequence_features(const LinkPath& path, const RoadNetwork& network,
                                       const TrafficSnapshot& traffic, std::size_t max_seq_len);

// ---------------------------------------------------------------------------

struct UserProfile {
  double hist_mean_ir = 0.0;
  double fastest_rate = 0.0;
  double toll_avoid_rate = 0.0;
  double highway_rate = 0.0;
  double scenic_rate = 0.0;
  double congestion_avoid_rate = 0.0;
  double wide_road_rate = 0.0;
  double mean_trip_km = 0.0;
  double peak_ratio = 0.0;
  int cluster_id = -1;

  std::vector<double> values() const;
  static UserProfile from_values(std::span<const double> v, int cluster_id = -1);
};

inline constexpr std::size_t kProfileDim = 9;
std::span<const std::string_view> profile_names();

struct TripHistoryItem {
  RouteFeatures driven;
  std::vector<RouteFeatures> candidates;
  double ir = 0.0;
};

/// Aggregates one user's history into behavioral rates.
UserProfile build_user_profile(std::span<const TripHistoryItem> history);

}  // namespace routerank
