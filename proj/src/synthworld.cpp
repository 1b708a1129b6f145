#include "routerank/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "routerank/json_io.hpp"

namespace routerank {

namespace {

// Seed-derivation tags.
constexpr std::uint64_t kTagUser = 0x05E1;
constexpr std::uint64_t kTagTrip = 0x7121;
constexpr std::uint64_t kTagGps = 0x6505;
constexpr std::uint64_t kTagTerrain = 0x7E22;
constexpr std::uint64_t kTagBusy = 0xB057;
constexpr std::uint64_t kTagTraffic = 0x72AF;
constexpr std::uint64_t kTagQuality = 0x9A11;

double hash_unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

constexpr std::int64_t kSecondsPerDay = 86400;

struct ClassSpec {
  double speed;  // m/s
  int lanes;
  double toll_per_km;
};

ClassSpec class_spec(RoadClass rc) {
  switch (rc) {
    case RoadClass::kHighway: return {30.0, 3, 0.6};
    case RoadClass::kArterial: return {17.0, 4, 0.0};
    case RoadClass::kCollector: return {13.0, 2, 0.0};
    case RoadClass::kLocal: return {10.0, 1, 0.0};
  }
  return {10.0, 1, 0.0};
}

RoadClass class_for_line(int index) {
  if (index % 6 == 0) return RoadClass::kHighway;
  if (index % 3 == 0) return RoadClass::kArterial;
  if (index % 2 == 0) return RoadClass::kCollector;
  return RoadClass::kLocal;
}

Timestamp start_of_calendar(const std::string& date) { return parse_iso8601(date + "T00:00:00"); }

}  // namespace

const std::array<Archetype, kNumArchetypes>& builtin_archetypes() {
  static const std::array<Archetype, kNumArchetypes> kArchetypes = {{
      {"toll_sensitive", {.eta = 3.0, .toll = 25.0, .road_quality = 5.0}},
      {"fastest", {.eta = 60.0, .distance = 3.0, .road_quality = 5.0}},
      {"road_quality", {.eta = 3.0, .road_quality = 20.0}},
      {"highway", {.eta = 3.0, .road_quality = 5.0, .highway = 10.0}},
      {"scenic", {.eta = 3.0, .road_quality = 5.0, .scenic = 40.0}},
      {"congestion_averse", {.eta = 3.0, .road_quality = 5.0, .congestion = 40.0}},
  }};
  return kArchetypes;
}

void WorldConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("world config: " + m); };
  if (grid_rows < 2 || grid_cols < 2) fail("lattice needs at least 2 x 2 nodes");
  if (!(spacing > 0.0)) fail("spacing must be > 0");
  if (diagonal_every < 0) fail("diagonal_every must be >= 0");
  if (!(cell_size > 0.0)) fail("cell_size must be > 0");
  if (n_users < 1) fail("n_users must be >= 1");
  if (trips_per_user < 1) fail("trips_per_user must be >= 1");
  if (candidates_k < 1) fail("candidates_k must be >= 1");
  if (!(temperature >= 0.0)) fail("temperature must be >= 0");
  if (!(weight_jitter >= 0.0)) fail("weight_jitter must be >= 0");
  if (!(p_detour >= 0.0 && p_detour <= 1.0)) fail("p_detour must lie in [0, 1]");
  if (!(peak_share >= 0.0 && peak_share <= 1.0)) fail("peak_share must lie in [0, 1]");
  double mix = 0.0;
  for (double m : distance_mix) {
    if (!(m >= 0.0)) fail("distance_mix entries must be >= 0");
    mix += m;
  }
  if (!(mix > 0.0)) fail("distance_mix must not be all zero");
  if (days < 1) fail("days must be >= 1");
  if (!(gps_sigma >= 0.0)) fail("gps_sigma must be >= 0");
  if (!(gps_interval > 0.0)) fail("gps_interval must be > 0");
  try {
    start_of_calendar(start_date);
  } catch (const Error&) {
    fail("start_date must be YYYY-MM-DD");
  }
}

void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = nlohmann::json{{"grid_rows", c.grid_rows},
                     {"grid_cols", c.grid_cols},
                     {"spacing", c.spacing},
                     {"diagonal_every", c.diagonal_every},
                     {"cell_size", c.cell_size},
                     {"n_users", c.n_users},
                     {"trips_per_user", c.trips_per_user},
                     {"candidates_k", c.candidates_k},
                     {"temperature", c.temperature},
                     {"weight_jitter", c.weight_jitter},
                     {"p_detour", c.p_detour},
                     {"distance_mix", c.distance_mix},
                     {"peak_share", c.peak_share},
                     {"start_date", c.start_date},
                     {"days", c.days},
                     {"gps_sigma", c.gps_sigma},
                     {"gps_interval", c.gps_interval},
                     {"seed", c.seed},
                     {"features", c.features}};
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
  reject_unknown_keys(j,
                      {"grid_rows", "grid_cols", "spacing", "diagonal_every", "cell_size", "n_users",
                       "trips_per_user", "candidates_k", "temperature", "weight_jitter", "p_detour", "distance_mix",
                       "peak_share", "start_date", "days", "gps_sigma", "gps_interval", "seed", "features"},
                      "world");
  auto opt = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError(std::string("world.") + key + ": " + ex.what());
    }
  };
  opt("grid_rows", c.grid_rows);
  opt("grid_cols", c.grid_cols);
  opt("spacing", c.spacing);
  opt("diagonal_every", c.diagonal_every);
  opt("cell_size", c.cell_size);
  opt("n_users", c.n_users);
  opt("trips_per_user", c.trips_per_user);
  opt("candidates_k", c.candidates_k);
  opt("temperature", c.temperature);
  opt("weight_jitter", c.weight_jitter);
  opt("p_detour", c.p_detour);
  opt("distance_mix", c.distance_mix);
  opt("peak_share", c.peak_share);
  opt("start_date", c.start_date);
  opt("days", c.days);
  opt("gps_sigma", c.gps_sigma);
  opt("gps_interval", c.gps_interval);
  opt("seed", c.seed);
  opt("features", c.features);
}

// ---------------------------------------------------------------------------

std::size_t expected_link_count(const WorldConfig& cfg) {
  const std::size_t r = static_cast<std::size_t>(cfg.grid_rows), c = static_cast<std::size_t>(cfg.grid_cols);
  std::size_t n = 2 * (r * (c - 1) + c * (r - 1));
  if (cfg.diagonal_every > 0) {
    for (std::size_t i = 0; i + 1 < r; ++i)
      for (std::size_t k = 0; k + 1 < c; ++k)
        if ((i + k) % static_cast<std::size_t>(cfg.diagonal_every) == 0) n += 2;
  }
  return n;
}

namespace {

RoadNetwork build_lattice(const WorldConfig& cfg) {
  const int rows = cfg.grid_rows, cols = cfg.grid_cols;
  std::vector<Node> nodes;
  nodes.reserve(static_cast<std::size_t>(rows * cols));
  auto node_id = [cols](int r, int c) { return static_cast<NodeId>(r * cols + c); };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) nodes.push_back({node_id(r, c), {c * cfg.spacing, r * cfg.spacing}});

  std::vector<Link> links;
  auto add_pair = [&](int r0, int c0, int r1, int c1, RoadClass rc) {
    const ClassSpec spec = class_spec(rc);
    for (int dir = 0; dir < 2; ++dir) {
      const NodeId a = dir == 0 ? node_id(r0, c0) : node_id(r1, c1);
      const NodeId b = dir == 0 ? node_id(r1, c1) : node_id(r0, c0);
      Link l;
      l.id = static_cast<LinkId>(links.size());
      l.from_node = a;
      l.to_node = b;
      const Vec2 pa = nodes[static_cast<std::size_t>(a)].pos, pb = nodes[static_cast<std::size_t>(b)].pos;
      l.geometry = {pa, pb};
      l.length = distance(pa, pb);
      l.lanes = spec.lanes;
      l.road_class = rc;
      l.speed_limit = spec.speed;
      l.toll = spec.toll_per_km * l.length / 1000.0;
      const int tr = static_cast<int>(b) / cols, tc = static_cast<int>(b) % cols;
      l.light_at_end = rc != RoadClass::kHighway && (tr + tc) % 2 == 0;
      links.push_back(std::move(l));
    }
  };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) add_pair(r, c, r, c + 1, class_for_line(r));
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r + 1 < rows; ++r) add_pair(r, c, r + 1, c, class_for_line(c));
  if (cfg.diagonal_every > 0) {
    for (int r = 0; r + 1 < rows; ++r)
      for (int c = 0; c + 1 < cols; ++c)
        if ((r + c) % cfg.diagonal_every == 0) add_pair(r, c, r + 1, c + 1, RoadClass::kLocal);
  }
  return RoadNetwork::build(std::move(nodes), std::move(links));
}

std::vector<TerrainCell> paint_terrain(const WorldConfig& cfg) {
  const double width = (cfg.grid_cols - 1) * cfg.spacing, height = (cfg.grid_rows - 1) * cfg.spacing;
  const double cs = cfg.cell_size;
  Rng rng(derive_seed(cfg.seed, kTagTerrain));

  // River: sinusoidal band across the map.
  const double river_y = height * rng.uniform(0.35, 0.65);
  const double river_amp = height * 0.12;
  const double river_period = width * rng.uniform(0.6, 1.0);
  const double river_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double river_half_width = 220.0;

  struct Disk {
    Vec2 c;
    double r;
  };
  std::vector<Disk> parks;
  const int n_parks = 8 + static_cast<int>(rng.below(5));
  for (int i = 0; i < n_parks; ++i)
    parks.push_back({{rng.uniform(0.0, width), rng.uniform(0.0, height)}, rng.uniform(600.0, 1800.0)});

  // Greenways: green strips along a stretch of some non-highway lattice lines.
  struct Greenway {
    bool vertical;
    double at, from, to;
  };
  std::vector<Greenway> greenways;
  const int n_greenways = 3 + static_cast<int>(rng.below(3));
  for (int i = 0; i < n_greenways; ++i) {
    const bool vertical = rng.below(2) == 1;
    const int lines = vertical ? cfg.grid_cols : cfg.grid_rows;
    int line = static_cast<int>(rng.below(static_cast<std::uint64_t>(lines)));
    if (class_for_line(line) == RoadClass::kHighway) line = (line + 1) % lines;
    const double span = vertical ? height : width;
    const double len = span * rng.uniform(0.4, 0.8);
    const double from = rng.uniform(0.0, span - len);
    greenways.push_back({vertical, line * cfg.spacing, from, from + len});
  }
  constexpr double kGreenwayHalfWidth = 150.0;
  const Vec2 center{width / 2.0, height / 2.0};
  const double max_r = norm(center);

  // Relative POI intensity per category at the center and at the edge.
  static constexpr std::array<double, kNumPoiCategories> kCore{2.0, 4.0, 4.0, 0.8, 0.5, 1.5, 1.0, 0.2};
  static constexpr std::array<double, kNumPoiCategories> kEdge{3.0, 0.5, 0.2, 0.6, 0.1, 0.2, 0.6, 1.5};

  std::vector<TerrainCell> cells;
  const int lo = -2;
  const int cx1 = static_cast<int>(std::floor(width / cs)) + 1;
  const int cy1 = static_cast<int>(std::floor(height / cs)) + 1;
  for (int cy = lo; cy <= cy1; ++cy) {
    for (int cx = lo; cx <= cx1; ++cx) {
      const Vec2 mid{(cx + 0.5) * cs, (cy + 0.5) * cs};
      CellRecord rec;
      const double ry = river_y + river_amp * std::sin(2.0 * M_PI * mid.x / river_period + river_phase);
      rec.water = std::abs(mid.y - ry) <= river_half_width;
      if (!rec.water) {
        for (const Disk& d : parks)
          if (distance(mid, d.c) <= d.r) rec.green = true;
        for (const Greenway& g : greenways) {
          const double across = g.vertical ? mid.x : mid.y, along = g.vertical ? mid.y : mid.x;
          if (std::abs(across - g.at) <= kGreenwayHalfWidth && along >= g.from && along <= g.to) rec.green = true;
        }
      }
      const double rel = std::min(1.0, distance(mid, center) / max_r);
      Rng cell_rng(derive_seed(cfg.seed, kTagTerrain, static_cast<std::uint64_t>(cx + 100000),
                               static_cast<std::uint64_t>(cy + 100000)));
      bool any_poi = false;
      if (!rec.water) {
        for (int k = 0; k < kNumPoiCategories; ++k) {
          const double lambda = (1.0 - rel) * kCore[k] + rel * kEdge[k];
          // Poisson draw by inversion; lambda is small.
          const double u = cell_rng.uniform();
          double p = std::exp(-lambda), cdf = p;
          std::uint32_t n = 0;
          while (u > cdf && n < 64) {
            ++n;
            p *= lambda / n;
            cdf += p;
          }
          rec.poi_counts[k] = n;
          any_poi |= n > 0;
        }
      }
      if (rec.water || rec.green || any_poi) cells.push_back({{cx, cy}, rec});
    }
  }
  return cells;
}

}  // namespace

std::vector<double> link_quality(const RoadNetwork& network, std::uint64_t seed) {
  std::vector<double> q;
  q.reserve(network.links().size());
  for (const Link& l : network.links()) {
    // Both directions of a road share one surface.
    const auto a = static_cast<std::uint64_t>(std::min(l.from_node, l.to_node));
    const auto b = static_cast<std::uint64_t>(std::max(l.from_node, l.to_node));
    const double surface = hash_unit(derive_seed(seed, kTagQuality, a, b)) < 0.5 ? 0.0 : 1.0;
    q.push_back(0.5 * (l.lanes >= 4 ? 1.0 : 0.0) + 0.5 * surface);
  }
  return q;
}

World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  World w;
  w.network = build_lattice(cfg);
  w.terrain = paint_terrain(cfg);
  w.grid = grid_overlay(w.network, cfg.cell_size, w.terrain);
  w.link_quality = link_quality(w.network, cfg.seed);
  const auto& arch = builtin_archetypes();
  for (int i = 0; i < cfg.n_users; ++i) {
    SynthUser u;
    u.user_id = i;
    u.archetype = i % kNumArchetypes;
    Rng rng(derive_seed(cfg.seed, kTagUser, static_cast<std::uint64_t>(i)));
    u.weights = arch[static_cast<std::size_t>(u.archetype)].weights;
    for (double* wt : {&u.weights.eta, &u.weights.distance, &u.weights.toll, &u.weights.road_quality,
                       &u.weights.highway, &u.weights.scenic, &u.weights.congestion})
      *wt *= std::exp(rng.normal(0.0, cfg.weight_jitter));
    w.users.push_back(u);
  }
  return w;
}

// ---------------------------------------------------------------------------

TrafficModel::TrafficModel(const RoadNetwork& network, std::uint64_t seed, FeatureConfig features)
    : seed_(seed), features_(features) {
  const auto nodes = network.nodes();
  Vec2 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  Vec2 hi = lo * -1.0;
  for (const Node& n : nodes) {
    lo = {std::min(lo.x, n.pos.x), std::min(lo.y, n.pos.y)};
    hi = {std::max(hi.x, n.pos.x), std::max(hi.y, n.pos.y)};
  }
  const Vec2 center = (lo + hi) * 0.5;
  const double max_r = std::max(1.0, distance(lo, center));
  const auto links = network.links();
  busyness_.resize(links.size());
  for (std::size_t i = 0; i < links.size(); ++i) {
    const Vec2 mid = (links[i].geometry.front() + links[i].geometry.back()) * 0.5;
    const double central = 1.0 - std::min(1.0, distance(mid, center) / max_r);
    busyness_[i] = 0.4 + 0.8 * hash_unit(derive_seed(seed_, kTagBusy, i)) + 0.4 * central;
  }
}

CongestionLevel TrafficModel::level(std::size_t link_idx, Timestamp t) const {
  const std::int64_t day = t >= 0 ? t / kSecondsPerDay : (t - kSecondsPerDay + 1) / kSecondsPerDay;
  const int hour = hour_of_day(t);
  const bool weekend = day_of_week(t) >= 5;
  const bool peak = !weekend && is_peak_hour(hour, features_);
  double stress = busyness_[link_idx] * (peak ? 1.0 : 0.5) * (weekend ? 0.8 : 1.0);
  stress = std::min(stress, 1.2);
  const double u = hash_unit(
      derive_seed(seed_, kTagTraffic, link_idx, static_cast<std::uint64_t>(day), static_cast<std::uint64_t>(hour)));
  const double p_severe = 0.20 * stress, p_cong = 0.30 * stress, p_slow = 0.30 * stress;
  if (u < p_severe) return CongestionLevel::kSevere;
  if (u < p_severe + p_cong) return CongestionLevel::kCongested;
  if (u < p_severe + p_cong + p_slow) return CongestionLevel::kSlow;
  return CongestionLevel::kFree;
}

TrafficSnapshot TrafficModel::snapshot(Timestamp t) const {
  TrafficSnapshot s;
  s.level.resize(busyness_.size());
  for (std::size_t i = 0; i < busyness_.size(); ++i) s.level[i] = level(i, t);
  return s;
}

std::vector<double> travel_time_weights(const RoadNetwork& network, const TrafficSnapshot& traffic,
                                        const FeatureConfig& cfg) {
  const auto links = network.links();
  if (traffic.level.size() != links.size()) throw InvalidArgument("traffic snapshot size does not match network");
  std::vector<double> w(links.size());
  for (std::size_t i = 0; i < links.size(); ++i) w[i] = link_travel_time(links[i], traffic.level[i], cfg);
  return w;
}

// ---------------------------------------------------------------------------

std::vector<UtilityInputs> utility_inputs(std::span<const LinkPath> candidates, std::span<const RouteFeatures> features,
                                          const RoadNetwork& network, const TrafficSnapshot& traffic,
                                          std::span<const double> link_quality) {
  if (candidates.size() != features.size()) throw InvalidArgument("utility_inputs: size mismatch");
  if (link_quality.size() != network.links().size()) throw InvalidArgument("utility_inputs: one quality per link required");
  std::vector<UtilityInputs> out;
  if (candidates.empty()) return out;
  double min_eta = features[0].eta, min_dist = features[0].distance;
  for (const auto& f : features) {
    min_eta = std::min(min_eta, f.eta);
    min_dist = std::min(min_dist, f.distance);
  }
  constexpr double kDecay = 5000.0;  // m
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const RouteFeatures& f = features[i];
    UtilityInputs u;
    u.rel_eta = f.eta / min_eta - 1.0;
    u.rel_distance = f.distance / min_dist - 1.0;
    u.toll = f.toll / 5.0;
    u.highway = f.highway_frac;
    u.scenic = f.water_frac + f.green_frac;
    double walked = 0.0, quality = 0.0, total = 0.0, cong_w = 0.0, w_sum = 0.0;
    for (LinkId id : candidates[i].links) {
      const std::size_t li = *network.link_index(id);
      const Link& l = network.links()[li];
      quality += link_quality[li] * l.length;
      total += l.length;
      const double w = std::exp(-(walked + 0.5 * l.length) / kDecay) * l.length;
      const auto lvl = static_cast<int>(traffic.level[li]);
      cong_w += w * (lvl >= 2 ? 1.0 : 0.0);
      w_sum += w;
      walked += l.length;
    }
    u.road_quality = total > 0.0 ? quality / total : 0.0;
    u.early_congestion = w_sum > 0.0 ? cong_w / w_sum : 0.0;
    out.push_back(u);
  }
  return out;
}

double utility(const ArchetypeWeights& w, const UtilityInputs& in) {
  return -w.eta * in.rel_eta - w.distance * in.rel_distance - w.toll * in.toll + w.road_quality * in.road_quality +
         w.highway * in.highway + w.scenic * in.scenic - w.congestion * in.early_congestion;
}

std::size_t choose_route(std::span<const double> utilities, double temperature, Rng& rng) {
  if (utilities.empty()) throw InvalidArgument("choose_route: no candidates");
  if (!(temperature >= 0.0)) throw InvalidArgument("choose_route: temperature must be >= 0");
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < utilities.size(); ++i) {
    const double v = temperature == 0.0 ? utilities[i] : utilities[i] / temperature + rng.gumbel();
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

std::optional<LinkPath> local_detour(const LinkPath& path, const RoadNetwork& network, std::span<const double> weights,
                                     Rng& rng) {
  const std::size_t n = path.links.size();
  if (n == 0) return std::nullopt;
  // Ban the path and its reverse twins so the detour never doubles back.
  std::vector<char> banned(network.links().size(), 0);
  for (LinkId id : path.links) {
    const std::size_t li = *network.link_index(id);
    banned[li] = 1;
    for (std::size_t back : network.out_links(network.to_index(li)))
      if (network.to_index(back) == network.from_index(li)) banned[back] = 1;
  }
  for (int attempt = 0; attempt < 3; ++attempt) {
    const std::size_t len = 1 + static_cast<std::size_t>(rng.below(std::min<std::size_t>(3, n)));
    const std::size_t start = static_cast<std::size_t>(rng.below(n - len + 1));
    const NodeId from = network.link(path.links[start]).from_node;
    const NodeId to = network.link(path.links[start + len - 1]).to_node;
    auto alt = shortest_path_avoiding(network, from, to, weights, banned);
    if (!alt) continue;
    std::vector<LinkId> ids(path.links.begin(), path.links.begin() + static_cast<std::ptrdiff_t>(start));
    ids.insert(ids.end(), alt->path.links.begin(), alt->path.links.end());
    ids.insert(ids.end(), path.links.begin() + static_cast<std::ptrdiff_t>(start + len), path.links.end());
    LinkPath out = network.make_path(std::move(ids));
    bool u_turn = false;
    for (std::size_t i = 1; i < out.links.size() && !u_turn; ++i) {
      const std::size_t a = *network.link_index(out.links[i - 1]), b = *network.link_index(out.links[i]);
      u_turn = network.from_index(a) == network.to_index(b) && network.to_index(a) == network.from_index(b);
    }
    if (!u_turn) return out;
  }
  return std::nullopt;
}

namespace {

Vec2 point_along(std::span<const Vec2> poly, double offset) {
  for (std::size_t i = 1; i < poly.size(); ++i) {
    const double seg = distance(poly[i - 1], poly[i]);
    if (offset <= seg || i + 1 == poly.size()) {
      const double t = seg > 0.0 ? std::clamp(offset / seg, 0.0, 1.0) : 0.0;
      return poly[i - 1] + (poly[i] - poly[i - 1]) * t;
    }
    offset -= seg;
  }
  return poly.back();
}

}  // namespace

Trajectory synthesize_gps(const LinkPath& path, const RoadNetwork& network, std::span<const double> link_speeds,
                          double sigma, double interval, std::uint64_t seed, Timestamp departure_time) {
  if (path.empty()) throw InvalidArgument("synthesize_gps: empty path");
  if (link_speeds.size() != path.links.size()) throw InvalidArgument("synthesize_gps: one speed per link required");
  if (!(sigma >= 0.0)) throw InvalidArgument("synthesize_gps: sigma must be >= 0");
  if (!(interval > 0.0)) throw InvalidArgument("synthesize_gps: interval must be > 0");

  std::vector<const Link*> links;
  std::vector<double> t_end;  // cumulative time at the end of each link
  double t = 0.0;
  for (std::size_t i = 0; i < path.links.size(); ++i) {
    if (!(link_speeds[i] > 0.0)) throw InvalidArgument("synthesize_gps: speeds must be > 0");
    links.push_back(&network.link(path.links[i]));
    t += links.back()->length / link_speeds[i];
    t_end.push_back(t);
  }
  const double total = t;

  auto position = [&](double at) {
    std::size_t k = static_cast<std::size_t>(std::lower_bound(t_end.begin(), t_end.end(), at) - t_end.begin());
    k = std::min(k, links.size() - 1);
    const double t0 = k == 0 ? 0.0 : t_end[k - 1];
    const double frac = std::clamp((at - t0) / (t_end[k] - t0), 0.0, 1.0);
    const auto& geom = links[k]->geometry;
    return point_along(geom, frac * polyline_length(geom));
  };

  Trajectory traj;
  traj.departure_time = departure_time;
  Rng rng(seed);
  auto emit = [&](double at) {
    Vec2 p = position(at);
    if (sigma > 0.0) {
      p.x += rng.normal(0.0, sigma);
      p.y += rng.normal(0.0, sigma);
    }
    traj.points.push_back({static_cast<double>(departure_time) + at, p});
  };
  const auto n_ticks = static_cast<std::size_t>(std::floor(total / interval + 1e-9));
  for (std::size_t k = 0; k <= n_ticks; ++k) emit(std::min(total, static_cast<double>(k) * interval));
  if (total - static_cast<double>(n_ticks) * interval > 1e-6) emit(total);
  return traj;
}

// ---------------------------------------------------------------------------

namespace {

struct DistanceBand {
  double lo, hi;  // straight-line meters
};

// Straight-line bands chosen so that driven lattice distances land mostly
// inside the <10 / 10-20 / >=20 km strata.
constexpr std::array<DistanceBand, 3> kBands{{{1500.0, 6500.0}, {8000.0, 12500.0}, {15500.0, 30000.0}}};

Timestamp sample_departure(const WorldConfig& cfg, Rng& rng) {
  const Timestamp day0 = start_of_calendar(cfg.start_date);
  const auto day = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(cfg.days)));
  int hour;
  if (rng.uniform() < cfg.peak_share) {
    const auto& w = cfg.features.peak_windows[rng.below(cfg.features.peak_windows.size())];
    hour = w.first + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, w.second - w.first))));
  } else {
    hour = 6 + static_cast<int>(rng.below(17));
  }
  const auto minute = static_cast<std::int64_t>(rng.below(60));
  const auto second = static_cast<std::int64_t>(rng.below(60));
  return day0 + day * kSecondsPerDay + hour * 3600 + minute * 60 + second;
}

std::size_t sample_band(const WorldConfig& cfg, Rng& rng) {
  const double total = cfg.distance_mix[0] + cfg.distance_mix[1] + cfg.distance_mix[2];
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < 2; ++i) {
    if (u < cfg.distance_mix[i]) return i;
    u -= cfg.distance_mix[i];
  }
  return 2;
}

std::pair<NodeId, NodeId> sample_od(const RoadNetwork& net, const DistanceBand& band, Rng& rng) {
  const auto nodes = net.nodes();
  std::pair<NodeId, NodeId> best{nodes[0].id, nodes[1].id};
  double best_gap = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 400; ++attempt) {
    const Node& a = nodes[rng.below(nodes.size())];
    const Node& b = nodes[rng.below(nodes.size())];
    if (a.id == b.id) continue;
    const double d = distance(a.pos, b.pos);
    if (d >= band.lo && d <= band.hi) return {a.id, b.id};
    const double gap = d < band.lo ? band.lo - d : d - band.hi;
    if (gap < best_gap) {
      best_gap = gap;
      best = {a.id, b.id};
    }
  }
  return best;
}

}  // namespace

SynthTrip generate_trip(const World& world, const WorldConfig& cfg, const TrafficModel& traffic, const SynthUser& user,
                        std::int64_t trip_id) {
  const RoadNetwork& net = world.network;
  Rng rng(derive_seed(cfg.seed, kTagTrip, static_cast<std::uint64_t>(user.user_id), static_cast<std::uint64_t>(trip_id)));
  SynthTrip trip;
  trip.user_id = user.user_id;
  trip.trip_id = trip_id;
  trip.departure_time = sample_departure(cfg, rng);
  const TrafficSnapshot snap = traffic.snapshot(trip.departure_time);
  const std::vector<double> weights = travel_time_weights(net, snap, cfg.features);

  const DistanceBand band = kBands[sample_band(cfg, rng)];
  for (int attempt = 0; attempt < 20 && trip.candidates.empty(); ++attempt) {
    std::tie(trip.origin, trip.dest) = sample_od(net, band, rng);
    for (auto& wp : k_shortest_paths(net, trip.origin, trip.dest, cfg.candidates_k, weights))
      trip.candidates.push_back(std::move(wp.path));
  }
  if (trip.candidates.empty())
    throw InvalidArgument("no reachable origin/destination pair for user " + std::to_string(user.user_id));

  std::vector<RouteFeatures> feats;
  feats.reserve(trip.candidates.size());
  for (const LinkPath& p : trip.candidates)
    feats.push_back(extract_route_features(p, net, world.grid, snap, trip.departure_time, cfg.features));
  const auto inputs = utility_inputs(trip.candidates, feats, net, snap, world.link_quality);
  std::vector<double> util;
  util.reserve(inputs.size());
  for (const auto& in : inputs) util.push_back(utility(user.weights, in));
  trip.chosen = choose_route(util, cfg.temperature, rng);

  trip.driven = trip.candidates[trip.chosen];
  if (cfg.p_detour > 0.0 && rng.uniform() < cfg.p_detour) {
    if (auto d = local_detour(trip.driven, net, weights, rng)) {
      trip.driven = std::move(*d);
      trip.detoured = true;
    }
  }

  std::vector<double> speeds;
  speeds.reserve(trip.driven.links.size());
  for (LinkId id : trip.driven.links) {
    const std::size_t li = *net.link_index(id);
    speeds.push_back(net.links()[li].length / weights[li]);
  }
  trip.trajectory = synthesize_gps(trip.driven, net, speeds, cfg.gps_sigma, cfg.gps_interval,
                                   derive_seed(cfg.seed, kTagGps, static_cast<std::uint64_t>(user.user_id),
                                               static_cast<std::uint64_t>(trip_id)),
                                   trip.departure_time);
  trip.trajectory.user_id = user.user_id;
  trip.trajectory.trip_id = trip_id;
  return trip;
}

SynthDataset generate_trips(const World& world, const WorldConfig& cfg) {
  cfg.validate();
  const TrafficModel traffic(world.network, cfg.seed, cfg.features);
  SynthDataset ds;
  ds.trips.reserve(world.users.size() * static_cast<std::size_t>(cfg.trips_per_user));
  for (const SynthUser& u : world.users)
    for (int t = 0; t < cfg.trips_per_user; ++t)
      ds.trips.push_back(generate_trip(world, cfg, traffic, u, u.user_id * cfg.trips_per_user + t));
  return ds;
}

}  // namespace routerank
