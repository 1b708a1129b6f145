#include "doctest.h"
#include "fixtures.hpp"
#include "routerank/featset.hpp"
#include "routerank/timeutil.hpp"

using namespace routerank;

namespace {

struct Corner {
  RoadNetwork net;
  GridIndex grid;
};

// (25,25) -> (125,25) -> (125,125): a toll link with a light, then a left
// turn onto a 3-lane highway link.
Corner corner() {
  std::vector<Node> nodes{{0, {25, 25}}, {1, {125, 25}}, {2, {125, 125}}};
  auto a = fixtures::straight_link(10, nodes[0], nodes[1], 10.0, 2);
  a.toll = 2.0;
  a.light_at_end = true;
  auto b = fixtures::straight_link(11, nodes[1], nodes[2], 20.0, 3);
  b.road_class = RoadClass::kHighway;
  Corner c{RoadNetwork::build(nodes, {a, b}), {}};
  CellRecord water, green, shop;
  water.water = true;
  water.poi_counts[0] = 3;
  green.green = true;
  shop.poi_counts[5] = 1;
  std::vector<TerrainCell> terrain{{{0, 0}, water}, {{1, 0}, green}, {{2, 2}, green}, {{2, 1}, shop}};
  c.grid = grid_overlay(c.net, 50.0, terrain);
  return c;
}

}  // namespace

TEST_CASE("route features by hand") {
  const auto c = corner();
  TrafficSnapshot traffic{{CongestionLevel::kFree, CongestionLevel::kCongested}};
  const Timestamp dep = parse_iso8601("2024-03-04T08:15:00");
  const auto f = extract_route_features(c.net.make_path({10, 11}), c.net, c.grid, traffic, dep);
  CHECK(f.distance == doctest::Approx(200.0));
  CHECK(f.eta == doctest::Approx(100.0 / 10.0 + 100.0 / (20.0 * 0.45)));
  CHECK(f.toll == 2.0);
  CHECK(f.n_lights == 1.0);
  CHECK(f.n_turns == 1.0);
  CHECK(f.congestion_frac[0] == doctest::Approx(0.5));
  CHECK(f.congestion_frac[2] == doctest::Approx(0.5));
  CHECK(f.highway_frac == doctest::Approx(0.5));
  CHECK(f.avg_lanes == doctest::Approx(2.5));
  // cells: (0,0) (1,0) (2,0) (2,1) (2,2)
  CHECK(f.water_frac == doctest::Approx(0.2));
  CHECK(f.green_frac == doctest::Approx(0.4));
  CHECK(f.poi_vec[0] == doctest::Approx(0.75));
  CHECK(f.poi_vec[5] == doctest::Approx(0.25));
  CHECK(f.is_peak == 1.0);
  CHECK(f.is_weekend == 0.0);
  CHECK(f.day_of_week == 0);
  CHECK(f.hour_of_day == 8);

  const auto d = f.dense();
  CHECK(d.size() == kRouteDenseDim);
  CHECK(route_dense_names().size() == kRouteDenseDim);
  const auto back = RouteFeatures::from_dense(d, f.day_of_week, f.hour_of_day);
  CHECK(back.dense() == d);
}

TEST_CASE("turn threshold") {
  const auto c = corner();
  auto traffic = TrafficSnapshot::free_flow(c.net);
  FeatureConfig cfg;
  cfg.turn_threshold_deg = 91.0;
  const auto f = extract_route_features(c.net.make_path({10, 11}), c.net, c.grid, traffic, 0, cfg);
  CHECK(f.n_turns == 0.0);
  CHECK(f.is_weekend == 0.0);  // 1970-01-01 is a Thursday
}

TEST_CASE("peak windows are half-open") {
  CHECK(is_peak_hour(7));
  CHECK(is_peak_hour(8));
  CHECK_FALSE(is_peak_hour(9));
  CHECK(is_peak_hour(17));
  CHECK_FALSE(is_peak_hour(19));
  CHECK_FALSE(is_peak_hour(3));
}

TEST_CASE("feature extraction preconditions") {
  const auto c = corner();
  auto traffic = TrafficSnapshot::free_flow(c.net);
  CHECK_THROWS_AS(extract_route_features(LinkPath{}, c.net, c.grid, traffic, 0), InvalidArgument);
  TrafficSnapshot wrong{{CongestionLevel::kFree}};
  CHECK_THROWS_AS(extract_route_features(c.net.make_path({10}), c.net, c.grid, wrong, 0), InvalidArgument);
}

TEST_CASE("request-relative columns") {
  RouteFeatures a, b;
  a.eta = 10;
  a.distance = 150;
  a.toll = 1;
  b.eta = 20;
  b.distance = 100;
  b.toll = 0;
  std::vector<RouteFeatures> cands{a, b};
  const auto rel = request_relative_features(cands);
  REQUIRE(rel.size() == 2);
  CHECK(rel[0] == std::array<double, 3>{1.0, 1.5, 1.0});
  CHECK(rel[1] == std::array<double, 3>{2.0, 1.0, 0.0});
}

TEST_CASE("link sequence padding and numerics") {
  const auto c = corner();
  TrafficSnapshot traffic{{CongestionLevel::kFree, CongestionLevel::kCongested}};
  const auto s = link_sequence_features(c.net.make_path({10, 11}), c.net, traffic, 3);
  CHECK(s.max_len() == 3);
  CHECK(s.steps() == 2);
  CHECK(s.link_ids == std::vector<LinkId>{10, 11, LinkSeqFeatures::kPaddingId});
  std::vector<double> v(kStepNumericDim);
  s.step_numeric(1, v);
  CHECK(v == std::vector<double>{0.1, 3, 1, 0, 0, 0, 0, 0, 1, 0});
  s.step_numeric(2, v);
  CHECK(v == std::vector<double>(kStepNumericDim, 0.0));

  const auto cut = link_sequence_features(c.net.make_path({10, 11}), c.net, traffic, 1);
  CHECK(cut.steps() == 1);
  CHECK_THROWS_AS(link_sequence_features(c.net.make_path({10}), c.net, traffic, 0), InvalidArgument);
}

TEST_CASE("user profile rates") {
  auto rf = [](double eta, double toll, double hw, double lanes, double heavy, double km, double peak) {
    RouteFeatures f;
    f.eta = eta;
    f.toll = toll;
    f.highway_frac = hw;
    f.avg_lanes = lanes;
    f.congestion_frac[3] = heavy;
    f.distance = km * 1000.0;
    f.is_peak = peak;
    f.water_frac = 0.2;
    return f;
  };
  // trip 1: drives the fastest, toll-free, low-congestion, wide route
  TripHistoryItem t1;
  t1.candidates = {rf(100, 0, 0.5, 3, 0.0, 5, 1), rf(120, 2, 0, 2, 0.5, 5, 1), rf(130, 4, 0, 1, 0.6, 5, 1)};
  t1.driven = t1.candidates[0];
  t1.ir = 0.0;
  // trip 2: drives the slowest, priciest, most congested, narrowest route
  TripHistoryItem t2;
  t2.candidates = t1.candidates;
  t2.driven = t1.candidates[2];
  t2.ir = 0.4;
  std::vector<TripHistoryItem> hist{t1, t2};
  const auto p = build_user_profile(hist);
  CHECK(p.hist_mean_ir == doctest::Approx(0.2));
  CHECK(p.fastest_rate == doctest::Approx(0.5));
  CHECK(p.toll_avoid_rate == doctest::Approx(0.5));
  CHECK(p.highway_rate == doctest::Approx(0.25));
  CHECK(p.scenic_rate == doctest::Approx(0.1));
  CHECK(p.congestion_avoid_rate == doctest::Approx(0.5));
  CHECK(p.wide_road_rate == doctest::Approx(0.5));
  CHECK(p.mean_trip_km == doctest::Approx(5.0));
  CHECK(p.peak_ratio == doctest::Approx(1.0));

  const auto v = p.values();
  CHECK(v.size() == kProfileDim);
  CHECK(profile_names().size() == kProfileDim);
  CHECK(UserProfile::from_values(v, 3).values() == v);
  CHECK_THROWS_AS(build_user_profile({}), InvalidArgument);
}
