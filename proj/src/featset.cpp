#include "routerank/featset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace routerank {

bool is_peak_hour(int hour, const FeatureConfig& cfg) {
  return std::any_of(cfg.peak_windows.begin(), cfg.peak_windows.end(),
                     [hour](const auto& w) { return hour >= w.first && hour < w.second; });
}

double link_travel_time(const Link& link, CongestionLevel level, const FeatureConfig& cfg) {
  return link.length / (link.speed_limit * cfg.speed_factor[static_cast<std::size_t>(level)]);
}

std::vector<double> RouteFeatures::dense() const {
  std::vector<double> v;
  v.reserve(kRouteDenseDim);
  v.insert(v.end(), {distance, eta, toll, n_lights, n_turns});
  v.insert(v.end(), congestion_frac.begin(), congestion_frac.end());
  v.insert(v.end(), {highway_frac, avg_lanes, water_frac, green_frac});
  v.insert(v.end(), poi_vec.begin(), poi_vec.end());
  v.insert(v.end(), {is_peak, is_weekend});
  return v;
}

RouteFeatures RouteFeatures::from_dense(std::span<const double> d, int dow, int hour) {
  if (d.size() < kRouteDenseDim) throw InvalidArgument("route dense vector too short");
  RouteFeatures f;
  f.distance = d[0];
  f.eta = d[1];
  f.toll = d[2];
  f.n_lights = d[3];
  f.n_turns = d[4];
  std::copy_n(d.begin() + 5, kNumCongestionLevels, f.congestion_frac.begin());
  f.highway_frac = d[9];
  f.avg_lanes = d[10];
  f.water_frac = d[11];
  f.green_frac = d[12];
  std::copy_n(d.begin() + 13, kNumPoiCategories, f.poi_vec.begin());
  f.is_peak = d[21];
  f.is_weekend = d[22];
  f.day_of_week = dow;
  f.hour_of_day = hour;
  return f;
}

std::span<const std::string_view> route_dense_names() {
  static constexpr std::array<std::string_view, kRouteDenseDim> kNames = {
      "distance",      "eta",        "toll",       "n_lights",   "n_turns",        "cong_free",
      "cong_slow",     "cong_congested", "cong_severe", "highway_frac", "avg_lanes", "water_frac",
      "green_frac",    "poi_residential", "poi_commercial", "poi_office", "poi_school", "poi_hospital",
      "poi_transit",   "poi_leisure", "poi_industrial", "is_peak", "is_weekend"};
  return kNames;
}

namespace {

Vec2 start_heading(const Link& l) { return l.geometry[1] - l.geometry[0]; }
Vec2 end_heading(const Link& l) { return l.geometry.back() - l.geometry[l.geometry.size() - 2]; }

double heading_change_deg(Vec2 a, Vec2 b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

std::size_t require_link(const RoadNetwork& net, LinkId id) {
  auto idx = net.link_index(id);
  if (!idx) throw InvalidArgument("path references unknown link " + std::to_string(id));
  return *idx;
}

}  // namespace

RouteFeatures extract_route_features(const LinkPath& path, const RoadNetwork& network, const GridIndex& grid,
                                     const TrafficSnapshot& traffic, Timestamp departure_time,
                                     const FeatureConfig& cfg) {
  if (path.empty()) throw InvalidArgument("extract_route_features: empty path");
  if (traffic.level.size() != network.links().size())
    throw InvalidArgument("traffic snapshot size does not match network");
  RouteFeatures f;
  std::array<double, kNumCongestionLevels> cong_len{};
  double highway_len = 0.0;
  double lane_len = 0.0;
  std::unordered_set<CellKey, CellKeyHash> seen;
  std::size_t n_cells = 0, n_water = 0, n_green = 0;
  std::array<double, kNumPoiCategories> poi{};

  const Link* prev = nullptr;
  for (LinkId id : path.links) {
    const std::size_t li = require_link(network, id);
    const Link& l = network.links()[li];
    const CongestionLevel level = traffic.level[li];
    f.distance += l.length;
    f.eta += link_travel_time(l, level, cfg);
    f.toll += l.toll;
    if (l.light_at_end) f.n_lights += 1.0;
    if (prev && heading_change_deg(end_heading(*prev), start_heading(l)) >= cfg.turn_threshold_deg) f.n_turns += 1.0;
    cong_len[static_cast<std::size_t>(level)] += l.length;
    if (l.road_class == RoadClass::kHighway) highway_len += l.length;
    lane_len += l.length * l.lanes;
    for (CellKey c : grid.link_cells(li)) {
      if (!seen.insert(c).second) continue;
      const CellRecord& rec = grid.cell(c);
      ++n_cells;
      n_water += rec.water;
      n_green += rec.green;
      for (int k = 0; k < kNumPoiCategories; ++k) poi[k] += rec.poi_counts[k];
    }
    prev = &l;
  }

  for (int k = 0; k < kNumCongestionLevels; ++k) f.congestion_frac[k] = cong_len[k] / f.distance;
  f.highway_frac = highway_len / f.distance;
  f.avg_lanes = lane_len / f.distance;
  if (n_cells > 0) {
    f.water_frac = static_cast<double>(n_water) / static_cast<double>(n_cells);
    f.green_frac = static_cast<double>(n_green) / static_cast<double>(n_cells);
  }
  const double poi_total = std::accumulate(poi.begin(), poi.end(), 0.0);
  if (poi_total > 0.0) {
    for (int k = 0; k < kNumPoiCategories; ++k) f.poi_vec[k] = poi[k] / poi_total;
  }
  f.day_of_week = day_of_week(departure_time);
  f.hour_of_day = hour_of_day(departure_time);
  f.is_peak = is_peak_hour(f.hour_of_day, cfg) ? 1.0 : 0.0;
  f.is_weekend = f.day_of_week >= 5 ? 1.0 : 0.0;
  return f;
}

std::vector<std::array<double, kRequestRelativeDim>> request_relative_features(
    std::span<const RouteFeatures> candidates) {
  std::vector<std::array<double, kRequestRelativeDim>> out;
  if (candidates.empty()) return out;
  double min_eta = candidates[0].eta, min_dist = candidates[0].distance, min_toll = candidates[0].toll;
  for (const auto& c : candidates) {
    min_eta = std::min(min_eta, c.eta);
    min_dist = std::min(min_dist, c.distance);
    min_toll = std::min(min_toll, c.toll);
  }
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back({c.eta / min_eta, c.distance / min_dist, c.toll - min_toll});
  return out;
}

// ---------------------------------------------------------------------------

std::size_t LinkSeqFeatures::steps() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void LinkSeqFeatures::step_numeric(std::size_t step, std::span<double> out) const {
  if (out.size() != kStepNumericDim) throw InvalidArgument("step_numeric: output must have 10 slots");
  std::fill(out.begin(), out.end(), 0.0);
  if (!mask[step]) return;
  out[0] = length[step] / 1000.0;
  out[1] = lanes[step];
  out[2 + road_class[step]] = 1.0;
  out[6 + congestion[step]] = 1.0;
}

LinkSeqFeatures link_sequence_features(const LinkPath& path, const RoadNetwork& network,
                                       const TrafficSnapshot& traffic, std::size_t max_seq_len) {
  if (max_seq_len == 0) throw InvalidArgument("max_seq_len must be >= 1");
  LinkSeqFeatures s;
  s.link_ids.assign(max_seq_len, LinkSeqFeatures::kPaddingId);
  s.length.assign(max_seq_len, 0.0);
  s.lanes.assign(max_seq_len, 0);
  s.road_class.assign(max_seq_len, 0);
  s.congestion.assign(max_seq_len, 0);
  s.mask.assign(max_seq_len, 0);
  const std::size_t n = std::min(path.links.size(), max_seq_len);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t li = require_link(network, path.links[i]);
    const Link& l = network.links()[li];
    s.link_ids[i] = l.id;
    s.length[i] = l.length;
    s.lanes[i] = l.lanes;
    s.road_class[i] = static_cast<int>(l.road_class);
    s.congestion[i] = static_cast<int>(traffic.level[li]);
    s.mask[i] = 1;
  }
  return s;
}

// ---------------------------------------------------------------------------

std::vector<double> UserProfile::values() const {
  return {hist_mean_ir, fastest_rate, toll_avoid_rate, highway_rate, scenic_rate,
          congestion_avoid_rate, wide_road_rate, mean_trip_km, peak_ratio};
}

UserProfile UserProfile::from_values(std::span<const double> v, int cluster_id) {
  if (v.size() != kProfileDim) throw InvalidArgument("user profile vector must have 9 entries");
  UserProfile p;
  p.hist_mean_ir = v[0];
  p.fastest_rate = v[1];
  p.toll_avoid_rate = v[2];
  p.highway_rate = v[3];
  p.scenic_rate = v[4];
  p.congestion_avoid_rate = v[5];
  p.wide_road_rate = v[6];
  p.mean_trip_km = v[7];
  p.peak_ratio = v[8];
  p.cluster_id = cluster_id;
  return p;
}

std::span<const std::string_view> profile_names() {
  static constexpr std::array<std::string_view, kProfileDim> kNames = {
      "hist_mean_ir", "fastest_rate",   "toll_avoid_rate", "highway_rate", "scenic_rate",
      "congestion_avoid_rate", "wide_road_rate", "mean_trip_km", "peak_ratio"};
  return kNames;
}

namespace {

template <typename Fn>
double median_of(std::span<const RouteFeatures> cands, Fn key) {
  std::vector<double> v;
  v.reserve(cands.size());
  for (const auto& c : cands) v.push_back(key(c));
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double heavy_congestion(const RouteFeatures& f) { return f.congestion_frac[2] + f.congestion_frac[3]; }

}  // namespace

UserProfile build_user_profile(std::span<const TripHistoryItem> history) {
  if (history.empty()) throw InvalidArgument("build_user_profile: empty history");
  UserProfile p;
  double n = 0.0;
  for (const TripHistoryItem& h : history) {
    if (h.candidates.empty()) throw InvalidArgument("build_user_profile: trip without candidates");
    n += 1.0;
    p.hist_mean_ir += h.ir;
    double min_eta = h.candidates[0].eta;
    for (const auto& c : h.candidates) min_eta = std::min(min_eta, c.eta);
    if (h.driven.eta <= min_eta) p.fastest_rate += 1.0;
    if (h.driven.toll < median_of(h.candidates, [](const RouteFeatures& f) { return f.toll; }))
      p.toll_avoid_rate += 1.0;
    p.highway_rate += h.driven.highway_frac;
    p.scenic_rate += 0.5 * (h.driven.water_frac + h.driven.green_frac);
    if (heavy_congestion(h.driven) < median_of(h.candidates, heavy_congestion)) p.congestion_avoid_rate += 1.0;
    if (h.driven.avg_lanes > median_of(h.candidates, [](const RouteFeatures& f) { return f.avg_lanes; }))
      p.wide_road_rate += 1.0;
    p.mean_trip_km += h.driven.distance / 1000.0;
    p.peak_ratio += h.driven.is_peak;
  }
  for (double* field : {&p.hist_mean_ir, &p.fastest_rate, &p.toll_avoid_rate, &p.highway_rate, &p.scenic_rate,
                        &p.congestion_avoid_rate, &p.wide_road_rate, &p.mean_trip_km, &p.peak_ratio})
    *field /= n;
  return p;
}

}  // namespace routerank
