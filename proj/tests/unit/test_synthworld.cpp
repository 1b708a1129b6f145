#include <cmath>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "routerank/synthworld.hpp"

using namespace routerank;

namespace {

WorldConfig tiny(std::uint64_t seed = 3) {
  WorldConfig c;
  c.grid_rows = 8;
  c.grid_cols = 9;
  c.n_users = 6;
  c.trips_per_user = 5;
  c.candidates_k = 5;
  c.seed = seed;
  return c;
}

bool has_u_turn(const RoadNetwork& net, const LinkPath& p) {
  for (std::size_t i = 1; i < p.links.size(); ++i) {
    const Link& a = net.link(p.links[i - 1]);
    const Link& b = net.link(p.links[i]);
    if (a.from_node == b.to_node && a.to_node == b.from_node) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("lattice link count") {
  WorldConfig c;
  c.grid_rows = 10;
  c.grid_cols = 10;
  c.diagonal_every = 0;
  CHECK(expected_link_count(c) == 360);
  CHECK(generate_world(c).network.links().size() == 360);
}

TEST_CASE("diagonals add two links per chosen cell") {
  auto c = tiny();
  std::size_t diag = 0;
  for (int r = 0; r + 1 < c.grid_rows; ++r)
    for (int col = 0; col + 1 < c.grid_cols; ++col)
      if ((r + col) % c.diagonal_every == 0) ++diag;
  const std::size_t straight = 2 * (8 * 8 + 9 * 7);
  CHECK(expected_link_count(c) == straight + 2 * diag);
  const auto w = generate_world(c);
  CHECK(w.network.links().size() == expected_link_count(c));
  CHECK(w.network.nodes().size() == 72);
}

TEST_CASE("world is a pure function of the seed") {
  const auto a = generate_world(tiny(5));
  const auto b = generate_world(tiny(5));
  REQUIRE(a.network.links().size() == b.network.links().size());
  for (std::size_t i = 0; i < a.network.links().size(); ++i) {
    const Link& x = a.network.links()[i];
    const Link& y = b.network.links()[i];
    CHECK(x.id == y.id);
    CHECK(x.lanes == y.lanes);
    CHECK(x.toll == y.toll);
    CHECK(x.geometry == y.geometry);
  }
  CHECK(a.link_quality == b.link_quality);
  REQUIRE(a.users.size() == 6);
  for (std::size_t i = 0; i < a.users.size(); ++i) CHECK(a.users[i].weights == b.users[i].weights);

  const auto c = generate_world(tiny(6));
  CHECK(c.link_quality != a.link_quality);
}

TEST_CASE("link quality is shared by both directions and bounded") {
  const auto w = generate_world(tiny());
  const auto& net = w.network;
  REQUIRE(w.link_quality.size() == net.links().size());
  for (std::size_t i = 0; i < net.links().size(); ++i) {
    CHECK(w.link_quality[i] >= 0.0);
    CHECK(w.link_quality[i] <= 1.0);
    for (std::size_t back : net.out_links(net.to_index(i)))
      if (net.to_index(back) == net.from_index(i)) CHECK(w.link_quality[back] == w.link_quality[i]);
  }
}

TEST_CASE("world config validation") {
  auto c = tiny();
  c.grid_rows = 1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny();
  c.p_detour = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny();
  c.start_date = "March";
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny();
  c.distance_mix = {0, 0, 0};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("gps sample count and placement") {
  std::vector<Node> nodes{{0, {0, 0}}, {1, {1000, 0}}};
  const auto net = RoadNetwork::build(nodes, {fixtures::straight_link(0, nodes[0], nodes[1])});
  const auto path = net.make_path({0});
  std::vector<double> speed{10.0};
  const auto t = synthesize_gps(path, net, speed, 0.0, 10.0, 1, 500);
  REQUIRE(t.points.size() == 11);
  for (std::size_t k = 0; k < t.points.size(); ++k) {
    CHECK(t.points[k].t == doctest::Approx(500.0 + 10.0 * k));
    CHECK(t.points[k].pos.x == doctest::Approx(100.0 * k));
    CHECK(t.points[k].pos.y == 0.0);
  }
  // a trailing partial interval still emits the endpoint
  std::vector<double> slower{9.0};
  const auto u = synthesize_gps(path, net, slower, 0.0, 10.0, 1);
  CHECK(u.points.size() == 13);
  CHECK(u.points.back().pos.x == doctest::Approx(1000.0));

  // noise has roughly the requested spread
  const auto noisy = synthesize_gps(path, net, std::vector<double>{0.5}, 5.0, 1.0, 2);
  double ss = 0.0;
  for (const auto& p : noisy.points) ss += p.pos.y * p.pos.y;
  CHECK(std::sqrt(ss / noisy.points.size()) == doctest::Approx(5.0).epsilon(0.1));

  CHECK_THROWS_AS(synthesize_gps(path, net, std::vector<double>{}, 0.0, 10.0, 1), InvalidArgument);
  CHECK_THROWS_AS(synthesize_gps(path, net, speed, -1.0, 10.0, 1), InvalidArgument);
}

TEST_CASE("route choice") {
  Rng rng(1);
  std::vector<double> u{1.0, 3.0, 3.0, 2.0};
  CHECK(choose_route(u, 0.0, rng) == 1);

  // Gumbel-max frequencies follow softmax(u / T)
  const double temp = 0.8;
  std::vector<double> p(u.size());
  double z = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) z += p[i] = std::exp(u[i] / temp);
  std::vector<int> hits(u.size(), 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++hits[choose_route(u, temp, rng)];
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(hits[i] / double(n) == doctest::Approx(p[i] / z).epsilon(0.05));
}

TEST_CASE("utility signs") {
  ArchetypeWeights w;
  w.toll = 2.0;
  w.scenic = 1.0;
  UtilityInputs cheap, pricey;
  pricey.toll = 1.0;
  CHECK(utility(w, cheap) > utility(w, pricey));
  UtilityInputs green;
  green.scenic = 0.5;
  CHECK(utility(w, green) > utility(w, cheap));
  CHECK(builtin_archetypes().size() == kNumArchetypes);
}

TEST_CASE("generated trips") {
  const auto cfg = tiny(8);
  const auto world = generate_world(cfg);
  const auto data = generate_trips(world, cfg);
  REQUIRE(data.trips.size() == 30);
  int detours = 0;
  for (std::size_t i = 0; i < data.trips.size(); ++i) {
    const auto& t = data.trips[i];
    CAPTURE(i);
    if (i > 0) {
      const auto& p = data.trips[i - 1];
      CHECK(std::pair(p.user_id, p.trip_id) < std::pair(t.user_id, t.trip_id));
    }
    REQUIRE_FALSE(t.candidates.empty());
    CHECK(t.candidates.size() <= 5);
    CHECK(t.chosen < t.candidates.size());
    std::set<std::vector<LinkId>> distinct;
    for (const auto& c : t.candidates) {
      distinct.insert(c.links);
      CHECK(world.network.link(c.links.front()).from_node == t.origin);
      CHECK(world.network.link(c.links.back()).to_node == t.dest);
    }
    CHECK(distinct.size() == t.candidates.size());
    CHECK_NOTHROW(world.network.make_path(t.driven.links));
    CHECK_FALSE(has_u_turn(world.network, t.driven));
    if (t.detoured) {
      ++detours;
      CHECK(t.driven.links != t.candidates[t.chosen].links);
    } else {
      CHECK(t.driven.links == t.candidates[t.chosen].links);
    }
    CHECK_NOTHROW(validate(t.trajectory));
    CHECK(t.trajectory.points.front().t == static_cast<double>(t.departure_time));
  }
  CHECK(detours < 30);

  // each trip regenerates alone
  const TrafficModel traffic(world.network, cfg.seed, cfg.features);
  const auto& pick = data.trips[17];
  const auto again = generate_trip(world, cfg, traffic, world.users[static_cast<std::size_t>(pick.user_id)], pick.trip_id);
  CHECK(again.driven == pick.driven);
  CHECK(again.departure_time == pick.departure_time);
  CHECK(again.trajectory.points.size() == pick.trajectory.points.size());
}

TEST_CASE("local detour keeps endpoints and avoids the replaced stretch") {
  const auto net = fixtures::lattice(5, 5);
  std::vector<double> w(net.links().size(), 1.0);
  const auto base = shortest_path(net, 0, 24, w)->path;
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto d = local_detour(base, net, w, rng);
    REQUIRE(d.has_value());
    CHECK(d->links != base.links);
    CHECK(net.link(d->links.front()).from_node == 0);
    CHECK(net.link(d->links.back()).to_node == 24);
    CHECK_FALSE(has_u_turn(net, *d));
  }
}

TEST_CASE("traffic is reproducible") {
  const auto w = generate_world(tiny());
  TrafficModel a(w.network, 9), b(w.network, 9);
  const Timestamp t = 1709535600;
  const auto sa = a.snapshot(t);
  CHECK(sa.level == b.snapshot(t).level);
  CHECK(sa.level.size() == w.network.links().size());
  const auto tt = travel_time_weights(w.network, sa);
  for (std::size_t i = 0; i < tt.size(); ++i)
    CHECK(tt[i] == doctest::Approx(link_travel_time(w.network.links()[i], sa.level[i])));
}
