#include "routerank/json_io.hpp"

#include <charconv>
#include <fstream>
#include <set>

namespace routerank {

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.count(it.key())) throw SchemaError(where + ": unknown key '" + it.key() + "'");
  }
}

namespace {

template <typename T>
void read_opt(const Json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError(where + "." + key + ": " + ex.what());
  }
}

}  // namespace

void to_json(Json& j, const DcrConfig& c) {
  j = Json{{"link_embed_dim", c.link_embed_dim},
           {"seq_proj_dim", c.seq_proj_dim},
           {"lstm_hidden", c.lstm_hidden},
           {"cross_layers", c.cross_layers},
           {"deep_hidden", c.deep_hidden},
           {"sparse_embed_dim", c.sparse_embed_dim},
           {"lr", c.lr},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"max_seq_len", c.max_seq_len},
           {"seed", c.seed},
           {"early_stop_patience", c.early_stop_patience},
           {"use_sequence", c.use_sequence}};
}

void from_json(const Json& j, DcrConfig& c) {
  const std::string w = "model";
  reject_unknown_keys(j,
                      {"link_embed_dim", "seq_proj_dim", "lstm_hidden", "cross_layers", "deep_hidden",
                       "sparse_embed_dim", "lr", "batch_size", "epochs", "max_seq_len", "seed",
                       "early_stop_patience", "use_sequence"},
                      w);
  read_opt(j, "link_embed_dim", c.link_embed_dim, w);
  read_opt(j, "seq_proj_dim", c.seq_proj_dim, w);
  read_opt(j, "lstm_hidden", c.lstm_hidden, w);
  read_opt(j, "cross_layers", c.cross_layers, w);
  read_opt(j, "deep_hidden", c.deep_hidden, w);
  read_opt(j, "sparse_embed_dim", c.sparse_embed_dim, w);
  read_opt(j, "lr", c.lr, w);
  read_opt(j, "batch_size", c.batch_size, w);
  read_opt(j, "epochs", c.epochs, w);
  read_opt(j, "max_seq_len", c.max_seq_len, w);
  read_opt(j, "seed", c.seed, w);
  read_opt(j, "early_stop_patience", c.early_stop_patience, w);
  read_opt(j, "use_sequence", c.use_sequence, w);
}

void to_json(Json& j, const FeatureConfig& c) {
  j = Json{{"speed_factor", c.speed_factor},
           {"turn_threshold_deg", c.turn_threshold_deg},
           {"max_seq_len", c.max_seq_len},
           {"peak_windows", Json::array({Json::array({c.peak_windows[0].first, c.peak_windows[0].second}),
                                         Json::array({c.peak_windows[1].first, c.peak_windows[1].second})})},
           {"request_relative", c.request_relative}};
}

void from_json(const Json& j, FeatureConfig& c) {
  const std::string w = "features";
  reject_unknown_keys(j, {"speed_factor", "turn_threshold_deg", "max_seq_len", "peak_windows", "request_relative"}, w);
  read_opt(j, "speed_factor", c.speed_factor, w);
  read_opt(j, "turn_threshold_deg", c.turn_threshold_deg, w);
  read_opt(j, "max_seq_len", c.max_seq_len, w);
  if (j.contains("peak_windows")) {
    std::vector<std::array<int, 2>> pw;
    read_opt(j, "peak_windows", pw, w);
    if (pw.size() != 2) throw SchemaError("features.peak_windows must hold two [start, end) pairs");
    for (std::size_t i = 0; i < 2; ++i) c.peak_windows[i] = {pw[i][0], pw[i][1]};
  }
  read_opt(j, "request_relative", c.request_relative, w);
  for (double f : c.speed_factor)
    if (!(f > 0.0)) throw SchemaError("features.speed_factor entries must be > 0");
}

void to_json(Json& j, const MapMatchConfig& c) {
  j = Json{{"search_radius", c.search_radius}, {"switch_margin", c.switch_margin}, {"link_penalty", c.link_penalty}};
}

void from_json(const Json& j, MapMatchConfig& c) {
  const std::string w = "map_match";
  reject_unknown_keys(j, {"search_radius", "switch_margin", "link_penalty"}, w);
  read_opt(j, "search_radius", c.search_radius, w);
  read_opt(j, "switch_margin", c.switch_margin, w);
  read_opt(j, "link_penalty", c.link_penalty, w);
}

void to_json(Json& j, const KMeansConfig& c) { j = Json{{"k", c.k}, {"max_iter", c.max_iter}, {"n_init", c.n_init}, {"seed", c.seed}}; }

void from_json(const Json& j, KMeansConfig& c) {
  const std::string w = "kmeans";
  reject_unknown_keys(j, {"k", "max_iter", "n_init", "seed"}, w);
  read_opt(j, "k", c.k, w);
  read_opt(j, "max_iter", c.max_iter, w);
  read_opt(j, "n_init", c.n_init, w);
  read_opt(j, "seed", c.seed, w);
}

void to_json(Json& j, const TsneConfig& c) {
  j = Json{{"perplexity", c.perplexity},
           {"iterations", c.iterations},
           {"seed", c.seed},
           {"learning_rate", c.learning_rate},
           {"early_exaggeration", c.early_exaggeration},
           {"exaggeration_iters", c.exaggeration_iters},
           {"momentum_switch_iter", c.momentum_switch_iter}};
}

void from_json(const Json& j, TsneConfig& c) {
  const std::string w = "tsne";
  reject_unknown_keys(j,
                      {"perplexity", "iterations", "seed", "learning_rate", "early_exaggeration",
                       "exaggeration_iters", "momentum_switch_iter"},
                      w);
  read_opt(j, "perplexity", c.perplexity, w);
  read_opt(j, "iterations", c.iterations, w);
  read_opt(j, "seed", c.seed, w);
  read_opt(j, "learning_rate", c.learning_rate, w);
  read_opt(j, "early_exaggeration", c.early_exaggeration, w);
  read_opt(j, "exaggeration_iters", c.exaggeration_iters, w);
  read_opt(j, "momentum_switch_iter", c.momentum_switch_iter, w);
}

// ---------------------------------------------------------------------------

void for_each_jsonl(const std::filesystem::path& path, const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream is(path);
  if (!is) throw MissingInput("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    try {
      fn(j, lineno);
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingInput("cannot open " + path.string());
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError(path.string() + ": " + ex.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------

void write_network(const std::filesystem::path& path, const RoadNetwork& net) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  for (const Node& n : net.nodes()) os << Json{{"kind", "node"}, {"id", n.id}, {"x", n.pos.x}, {"y", n.pos.y}}.dump() << '\n';
  for (const Link& l : net.links()) {
    Json geom = Json::array();
    for (Vec2 p : l.geometry) geom.push_back({p.x, p.y});
    os << Json{{"kind", "link"},
               {"id", l.id},
               {"from", l.from_node},
               {"to", l.to_node},
               {"length", l.length},
               {"lanes", l.lanes},
               {"road_class", std::string(to_string(l.road_class))},
               {"speed_limit", l.speed_limit},
               {"toll", l.toll},
               {"light_at_end", l.light_at_end},
               {"geometry", geom}}
              .dump()
       << '\n';
  }
}

RoadNetwork read_network(const std::filesystem::path& path) {
  std::vector<Node> nodes;
  std::vector<Link> links;
  for_each_jsonl(path, [&](const Json& j, std::size_t lineno) {
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto kind = get_field<std::string>(j, "kind", where);
    if (kind == "node") {
      nodes.push_back({get_field<NodeId>(j, "id", where), {get_field<double>(j, "x", where), get_field<double>(j, "y", where)}});
    } else if (kind == "link") {
      Link l;
      l.id = get_field<LinkId>(j, "id", where);
      l.from_node = get_field<NodeId>(j, "from", where);
      l.to_node = get_field<NodeId>(j, "to", where);
      l.length = get_field<double>(j, "length", where);
      l.lanes = get_field<int>(j, "lanes", where);
      try {
        l.road_class = road_class_from_string(get_field<std::string>(j, "road_class", where));
      } catch (const InvalidArgument& ex) {
        throw SchemaError(where + ": " + ex.what());
      }
      l.speed_limit = get_field<double>(j, "speed_limit", where);
      l.toll = j.value("toll", 0.0);
      l.light_at_end = j.value("light_at_end", false);
      for (const auto& p : get_field<std::vector<std::array<double, 2>>>(j, "geometry", where))
        l.geometry.push_back({p[0], p[1]});
      links.push_back(std::move(l));
    } else {
      throw SchemaError(where + ": unknown kind '" + kind + "'");
    }
  });
  try {
    return RoadNetwork::build(std::move(nodes), std::move(links));
  } catch (const NetworkError& ex) {
    throw SchemaError(path.string() + ": " + ex.what());
  }
}

void write_terrain(const std::filesystem::path& path, double cell_size, std::span<const TerrainCell> cells) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << Json{{"kind", "grid"}, {"cell_size", cell_size}}.dump() << '\n';
  for (const TerrainCell& c : cells) {
    os << Json{{"kind", "cell"},
               {"cx", c.key.cx},
               {"cy", c.key.cy},
               {"water", c.record.water},
               {"green", c.record.green},
               {"poi", c.record.poi_counts}}
              .dump()
       << '\n';
  }
}

std::vector<TerrainCell> read_terrain(const std::filesystem::path& path, double* cell_size) {
  std::vector<TerrainCell> cells;
  double cs = 0.0;
  for_each_jsonl(path, [&](const Json& j, std::size_t lineno) {
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto kind = get_field<std::string>(j, "kind", where);
    if (kind == "grid") {
      cs = get_field<double>(j, "cell_size", where);
    } else if (kind == "cell") {
      TerrainCell c;
      c.key = {get_field<std::int32_t>(j, "cx", where), get_field<std::int32_t>(j, "cy", where)};
      c.record.water = j.value("water", false);
      c.record.green = j.value("green", false);
      if (j.contains("poi")) c.record.poi_counts = get_field<std::array<std::uint32_t, kNumPoiCategories>>(j, "poi", where);
      cells.push_back(c);
    } else {
      throw SchemaError(where + ": unknown kind '" + kind + "'");
    }
  });
  if (!(cs > 0.0)) throw SchemaError(path.string() + ": missing grid header with positive cell_size");
  if (cell_size) *cell_size = cs;
  return cells;
}

Json trajectory_to_json(const Trajectory& t) {
  Json pts = Json::array();
  for (const GpsPoint& p : t.points) pts.push_back({p.t, p.pos.x, p.pos.y});
  return Json{{"user_id", t.user_id},
              {"trip_id", t.trip_id},
              {"departure_time", format_iso8601(t.departure_time)},
              {"points", pts}};
}

Trajectory trajectory_from_json(const Json& j) {
  Trajectory t;
  t.user_id = get_field<std::int64_t>(j, "user_id", "trajectory");
  t.trip_id = get_field<std::int64_t>(j, "trip_id", "trajectory");
  t.departure_time = parse_iso8601(get_field<std::string>(j, "departure_time", "trajectory"));
  for (const auto& p : get_field<std::vector<std::array<double, 3>>>(j, "points", "trajectory"))
    t.points.push_back({p[0], {p[1], p[2]}});
  return t;
}

}  // namespace routerank
