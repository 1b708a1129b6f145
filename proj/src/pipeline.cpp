#include "routerank/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <numeric>
#include <sstream>

namespace routerank {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTagSplit = 0x5B17;

// File names inside a run directory.
constexpr const char* kNetworkFile = "network.jsonl";
constexpr const char* kTerrainFile = "terrain.jsonl";
constexpr const char* kUsersFile = "users.jsonl";
constexpr const char* kRequestsFile = "requests.jsonl";
constexpr const char* kTrajectoriesFile = "trajectories.jsonl";
constexpr const char* kTruthFile = "truth.jsonl";
constexpr const char* kTripsFile = "trips.jsonl";
constexpr const char* kFeaturesFile = "features.jsonl";
constexpr const char* kProfilesFile = "profiles.jsonl";
constexpr const char* kClusterReportFile = "cluster_report.csv";
constexpr const char* kTsneFile = "tsne.csv";
constexpr const char* kKmeansFile = "kmeans.json";
constexpr const char* kDcrCkpt = "dcr.ckpt";
constexpr const char* kNoseqCkpt = "noseq.ckpt";
constexpr const char* kDcrReport = "train_report_dcr.json";
constexpr const char* kNoseqReport = "train_report_noseq.json";
constexpr const char* kEvalJson = "eval_report.json";
constexpr const char* kEvalTable = "eval_table.csv";
constexpr const char* kEvalStrata = "eval_strata.csv";
constexpr const char* kTsneSvg = "tsne.svg";
constexpr const char* kStrataSvg = "strata.svg";

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::trunc | std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  return os;
}

void write_text(const fs::path& p, const std::string& text) {
  auto os = open_out(p);
  os << text;
}

fs::path require_file(const fs::path& p) {
  if (!fs::exists(p)) throw MissingInput("missing input: " + p.string());
  return p;
}

Json train_report_json(const TrainReport& r) {
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    Json ej{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}};
    ej["val_auc"] = std::isnan(e.val_auc) ? Json(nullptr) : Json(e.val_auc);
    epochs.push_back(ej);
  }
  return Json{{"seed", r.seed},
              {"config", r.config},
              {"best_epoch", r.best_epoch},
              {"early_stopped", r.early_stopped},
              {"epochs", epochs}};
}

}  // namespace

// ---------------------------------------------------------------------------

void PipelineConfig::apply_seed(std::uint64_t s) {
  seed = s;
  world.seed = s;
  kmeans.seed = s;
  tsne.seed = s;
  model.seed = s;
}

void PipelineConfig::validate() const {
  world.validate();
  model.validate();
  if (!(follow_threshold >= 0.0 && follow_threshold <= 1.0))
    throw InvalidArgument("follow_threshold must lie in [0, 1]");
  if (!(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0))
    throw InvalidArgument("split fractions must be positive and leave room for a test split");
  if (kmeans.k < 1) throw InvalidArgument("kmeans.k must be >= 1");
  if (!(tsne.perplexity > 0.0) || tsne.iterations < 1) throw InvalidArgument("tsne settings must be positive");
  if (!(map_match.search_radius > 0.0)) throw InvalidArgument("map_match.search_radius must be > 0");
}

void to_json(Json& j, const PipelineConfig& c) {
  j = Json{{"seed", c.seed},
           {"world", c.world},
           {"map_match", c.map_match},
           {"follow_threshold", c.follow_threshold},
           {"train_frac", c.train_frac},
           {"val_frac", c.val_frac},
           {"kmeans", c.kmeans},
           {"tsne", c.tsne},
           {"model", c.model}};
}

void from_json(const Json& j, PipelineConfig& c) {
  reject_unknown_keys(j,
                      {"seed", "world", "map_match", "follow_threshold", "train_frac", "val_frac", "kmeans", "tsne",
                       "model"},
                      "config");
  auto opt = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError(std::string("config.") + key + ": " + ex.what());
    }
  };
  opt("world", c.world);
  opt("map_match", c.map_match);
  opt("follow_threshold", c.follow_threshold);
  opt("train_frac", c.train_frac);
  opt("val_frac", c.val_frac);
  opt("kmeans", c.kmeans);
  opt("tsne", c.tsne);
  opt("model", c.model);
  std::uint64_t seed = c.seed;
  opt("seed", seed);
  c.apply_seed(seed);
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  PipelineConfig cfg;
  if (!path.empty()) cfg = read_json_file(path).get<PipelineConfig>();
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

std::string sha256_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingInput("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256 init failed");
  }
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

void to_json(Json& j, const RunManifest& m) {
  auto digests = [](const std::vector<FileDigest>& v) {
    Json a = Json::array();
    for (const auto& d : v) a.push_back({{"path", d.path}, {"sha256", d.sha256}});
    return a;
  };
  j = Json{{"command", m.command},
           {"tool_version", m.tool_version},
           {"seed", m.seed},
           {"config", m.config},
           {"inputs", digests(m.inputs)},
           {"outputs", digests(m.outputs)},
           {"summary", m.summary}};
}

void from_json(const Json& j, RunManifest& m) {
  m.command = get_field<std::string>(j, "command", "manifest");
  m.tool_version = get_field<std::string>(j, "tool_version", "manifest");
  m.seed = get_field<std::uint64_t>(j, "seed", "manifest");
  m.config = j.value("config", Json::object());
  m.summary = j.value("summary", Json::object());
  for (const char* key : {"inputs", "outputs"}) {
    auto& dst = std::string(key) == "inputs" ? m.inputs : m.outputs;
    for (const auto& d : get_field<Json>(j, key, "manifest"))
      dst.push_back({get_field<std::string>(d, "path", "manifest"), get_field<std::string>(d, "sha256", "manifest")});
  }
}

fs::path manifest_path(const fs::path& dir, const std::string& command) { return dir / (command + ".manifest.json"); }

RunManifest verify_stage(const fs::path& dir, const std::string& command) {
  const fs::path mp = manifest_path(dir, command);
  if (!fs::exists(mp)) throw MissingInput("missing manifest " + mp.string() + " (run '" + command + "' first)");
  RunManifest m = read_json_file(mp).get<RunManifest>();
  for (const FileDigest& d : m.outputs) {
    const fs::path p = dir / d.path;
    if (!fs::exists(p)) throw MissingInput("missing input: " + p.string());
    if (sha256_file(p) != d.sha256) throw SchemaError("digest mismatch for " + p.string() + " (listed in " + mp.string() + ")");
  }
  return m;
}

namespace {

/// Inputs are the verified outputs of upstream stages, restricted to `names`.
std::vector<FileDigest> pick_digests(const RunManifest& upstream, std::initializer_list<const char*> names) {
  std::vector<FileDigest> out;
  for (const char* n : names) {
    auto it = std::find_if(upstream.outputs.begin(), upstream.outputs.end(), [&](const FileDigest& d) { return d.path == n; });
    if (it == upstream.outputs.end())
      throw SchemaError("manifest of '" + upstream.command + "' does not list " + std::string(n));
    out.push_back(*it);
  }
  return out;
}

RunManifest finish_stage(const StageContext& ctx, const std::string& command, const PipelineConfig& cfg,
                         std::vector<FileDigest> inputs, std::initializer_list<const char*> outputs, Json summary) {
  RunManifest m;
  m.command = command;
  m.seed = cfg.seed;
  m.config = cfg;
  m.inputs = std::move(inputs);
  for (const char* o : outputs) m.outputs.push_back({o, sha256_file(ctx.dir / o)});
  m.summary = std::move(summary);
  write_json_file(manifest_path(ctx.dir, command), m);
  return m;
}

WorldConfig world_of(const RunManifest& gen) {
  try {
    return gen.config.at("world").get<WorldConfig>();
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError(std::string("gen manifest lacks a usable world config: ") + ex.what());
  }
}

}  // namespace

void StageContext::log(const std::string& msg) const {
  if (!quiet) std::cerr << msg << '\n';
}

// ---------------------------------------------------------------------------
// Records

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw SchemaError("unknown split '" + std::string(s) + "'");
}

std::vector<Split> assign_splits(std::size_t n_trips, double train_frac, double val_frac, std::uint64_t seed) {
  std::vector<std::size_t> order(n_trips);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, kTagSplit));
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n_trips)));
  const auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n_trips)));
  std::vector<Split> out(n_trips, Split::kTest);
  for (std::size_t i = 0; i < n_trips; ++i) {
    if (i < n_train) out[order[i]] = Split::kTrain;
    else if (i < n_train + n_val) out[order[i]] = Split::kVal;
  }
  return out;
}

Json to_json(const TripRecord& r) {
  return Json{{"user_id", r.user_id},
              {"trip_id", r.trip_id},
              {"split", std::string(to_string(r.split))},
              {"departure_time", format_iso8601(r.departure_time)},
              {"traj_km", r.traj_km},
              {"matched", r.matched},
              {"driven_dense", r.driven_dense},
              {"trip_ir", r.trip_ir},
              {"n_candidates", r.n_candidates}};
}

TripRecord trip_record_from_json(const Json& j) {
  const std::string w = "trip";
  TripRecord r;
  r.user_id = get_field<std::int64_t>(j, "user_id", w);
  r.trip_id = get_field<std::int64_t>(j, "trip_id", w);
  r.split = split_from_string(get_field<std::string>(j, "split", w));
  r.departure_time = parse_iso8601(get_field<std::string>(j, "departure_time", w));
  r.traj_km = get_field<double>(j, "traj_km", w);
  r.matched = get_field<std::vector<LinkId>>(j, "matched", w);
  r.driven_dense = get_field<std::vector<double>>(j, "driven_dense", w);
  r.trip_ir = get_field<double>(j, "trip_ir", w);
  r.n_candidates = get_field<std::size_t>(j, "n_candidates", w);
  if (r.driven_dense.size() != kRouteDenseDim) throw SchemaError("trip: driven_dense must have 23 entries");
  return r;
}

Json to_json(const CandidateRecord& r, std::size_t max_seq_len) {
  std::vector<LinkId> ids;
  std::vector<double> len;
  std::vector<int> lanes, cls, cong;
  for (const SeqStep& s : r.steps) {
    ids.push_back(s.link_id);
    len.push_back(s.length);
    lanes.push_back(s.lanes);
    cls.push_back(s.road_class);
    cong.push_back(s.congestion);
  }
  std::vector<int> mask(std::max(max_seq_len, r.steps.size()), 0);
  std::fill_n(mask.begin(), r.steps.size(), 1);
  return Json{{"user_id", r.user_id},
              {"trip_id", r.trip_id},
              {"cand_index", r.cand_index},
              {"split", std::string(to_string(r.split))},
              {"dense", r.dense},
              {"day_of_week", r.day_of_week},
              {"hour_of_day", r.hour_of_day},
              {"seq", {{"link_ids", ids}, {"length", len}, {"lanes", lanes}, {"road_class", cls}, {"congestion", cong}}},
              {"mask", mask},
              {"y", r.y},
              {"ir", r.ir}};
}

CandidateRecord candidate_record_from_json(const Json& j) {
  const std::string w = "candidate";
  CandidateRecord r;
  r.user_id = get_field<std::int64_t>(j, "user_id", w);
  r.trip_id = get_field<std::int64_t>(j, "trip_id", w);
  r.cand_index = get_field<std::size_t>(j, "cand_index", w);
  r.split = split_from_string(get_field<std::string>(j, "split", w));
  r.dense = get_field<std::vector<double>>(j, "dense", w);
  r.day_of_week = get_field<int>(j, "day_of_week", w);
  r.hour_of_day = get_field<int>(j, "hour_of_day", w);
  const Json& seq = get_field<Json>(j, "seq", w);
  const auto ids = get_field<std::vector<LinkId>>(seq, "link_ids", w);
  const auto len = get_field<std::vector<double>>(seq, "length", w);
  const auto lanes = get_field<std::vector<int>>(seq, "lanes", w);
  const auto cls = get_field<std::vector<int>>(seq, "road_class", w);
  const auto cong = get_field<std::vector<int>>(seq, "congestion", w);
  const auto mask = get_field<std::vector<int>>(j, "mask", w);
  const std::size_t n = ids.size();
  if (len.size() != n || lanes.size() != n || cls.size() != n || cong.size() != n)
    throw SchemaError("candidate: sequence arrays differ in length");
  if (mask.size() < n || std::count(mask.begin(), mask.end(), 1) != static_cast<std::ptrdiff_t>(n))
    throw SchemaError("candidate: mask does not match the sequence length");
  for (std::size_t i = 0; i < n; ++i) {
    if (cls[i] < 0 || cls[i] >= kNumRoadClasses || cong[i] < 0 || cong[i] >= kNumCongestionLevels || lanes[i] < 0 ||
        lanes[i] > 255)
      throw SchemaError("candidate: sequence attribute out of range");
    r.steps.push_back({ids[i], len[i], static_cast<std::uint8_t>(lanes[i]), static_cast<std::uint8_t>(cls[i]),
                       static_cast<std::uint8_t>(cong[i])});
  }
  r.y = get_field<int>(j, "y", w);
  r.ir = get_field<double>(j, "ir", w);
  if (r.y != 0 && r.y != 1) throw SchemaError("candidate: y must be 0 or 1");
  return r;
}

std::vector<TripRecord> read_trips(const fs::path& path) {
  std::vector<TripRecord> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(trip_record_from_json(j)); });
  return out;
}

std::vector<CandidateRecord> read_candidates(const fs::path& path) {
  std::vector<CandidateRecord> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(candidate_record_from_json(j)); });
  return out;
}

std::vector<ProfileRecord> read_profiles(const fs::path& path) {
  std::vector<ProfileRecord> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t) {
    ProfileRecord r;
    r.user_id = get_field<std::int64_t>(j, "user_id", "profile");
    r.n_train_trips = get_field<std::size_t>(j, "n_train_trips", "profile");
    std::vector<double> v;
    for (std::string_view name : profile_names()) v.push_back(get_field<double>(j, std::string(name).c_str(), "profile"));
    r.profile = UserProfile::from_values(v, get_field<int>(j, "cluster_id", "profile"));
    out.push_back(r);
  });
  return out;
}

std::vector<SynthUser> read_users(const fs::path& path) {
  std::vector<SynthUser> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t) {
    SynthUser u;
    u.user_id = get_field<std::int64_t>(j, "user_id", "user");
    u.archetype = get_field<int>(j, "archetype", "user");
    const Json& w = get_field<Json>(j, "weights", "user");
    u.weights = {w.at("eta"), w.at("distance"), w.at("toll"), w.at("road_quality"),
                 w.at("highway"), w.at("scenic"), w.at("congestion")};
    out.push_back(u);
  });
  return out;
}

std::vector<DcrSample> make_samples(std::span<const CandidateRecord> cands, std::span<const ProfileRecord> profiles,
                                    std::optional<Split> only) {
  std::map<std::int64_t, const ProfileRecord*> by_user;
  for (const auto& p : profiles) by_user[p.user_id] = &p;
  std::vector<DcrSample> out;
  for (const CandidateRecord& c : cands) {
    if (only && c.split != *only) continue;
    auto it = by_user.find(c.user_id);
    if (it == by_user.end()) throw SchemaError("no profile for user " + std::to_string(c.user_id));
    DcrSample s;
    s.dense = c.dense;
    s.profile = it->second->profile.values();
    s.day_of_week = c.day_of_week;
    s.hour_of_day = c.hour_of_day;
    s.cluster_id = it->second->profile.cluster_id;
    s.steps = c.steps;
    s.y = c.y;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// gen

RunManifest cmd_gen(const PipelineConfig& cfg, const StageContext& ctx) {
  cfg.validate();
  fs::create_directories(ctx.dir);
  const auto t0 = std::chrono::steady_clock::now();
  const World world = generate_world(cfg.world);
  const SynthDataset ds = generate_trips(world, cfg.world);
  ctx.log("gen: " + std::to_string(ds.trips.size()) + " trips in " +
          format_double(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");

  write_network(ctx.dir / kNetworkFile, world.network);
  write_terrain(ctx.dir / kTerrainFile, cfg.world.cell_size, world.terrain);
  {
    auto os = open_out(ctx.dir / kUsersFile);
    const auto& arch = builtin_archetypes();
    for (const SynthUser& u : world.users) {
      const auto& w = u.weights;
      os << Json{{"user_id", u.user_id},
                 {"archetype", u.archetype},
                 {"archetype_name", std::string(arch[static_cast<std::size_t>(u.archetype)].name)},
                 {"weights",
                  {{"eta", w.eta},
                   {"distance", w.distance},
                   {"toll", w.toll},
                   {"road_quality", w.road_quality},
                   {"highway", w.highway},
                   {"scenic", w.scenic},
                   {"congestion", w.congestion}}}}
                .dump()
         << '\n';
    }
  }
  std::size_t n_candidates = 0, n_detoured = 0;
  {
    auto req = open_out(ctx.dir / kRequestsFile);
    auto traj = open_out(ctx.dir / kTrajectoriesFile);
    auto truth = open_out(ctx.dir / kTruthFile);
    for (const SynthTrip& t : ds.trips) {
      Json cands = Json::array();
      for (const LinkPath& p : t.candidates) cands.push_back(p.links);
      req << Json{{"user_id", t.user_id},
                  {"trip_id", t.trip_id},
                  {"departure_time", format_iso8601(t.departure_time)},
                  {"origin", t.origin},
                  {"dest", t.dest},
                  {"candidates", cands}}
                 .dump()
          << '\n';
      traj << trajectory_to_json(t.trajectory).dump() << '\n';
      truth << Json{{"user_id", t.user_id},
                    {"trip_id", t.trip_id},
                    {"chosen", t.chosen},
                    {"detoured", t.detoured},
                    {"driven", t.driven.links}}
                   .dump()
            << '\n';
      n_candidates += t.candidates.size();
      n_detoured += t.detoured;
    }
  }
  Json summary{{"n_nodes", world.network.nodes().size()},
               {"n_links", world.network.links().size()},
               {"n_users", world.users.size()},
               {"n_trips", ds.trips.size()},
               {"n_candidates", n_candidates},
               {"n_detoured", n_detoured}};
  return finish_stage(ctx, "gen", cfg, {},
                      {kNetworkFile, kTerrainFile, kUsersFile, kRequestsFile, kTrajectoriesFile, kTruthFile}, summary);
}

// ---------------------------------------------------------------------------
// extract

RunManifest cmd_extract(const PipelineConfig& cfg, const StageContext& ctx) {
  cfg.validate();
  const RunManifest gen = verify_stage(ctx.dir, "gen");
  const WorldConfig world_cfg = world_of(gen);
  const FeatureConfig& fcfg = world_cfg.features;
  const RoadNetwork net = read_network(ctx.dir / kNetworkFile);
  double cell_size = 0.0;
  const auto terrain = read_terrain(ctx.dir / kTerrainFile, &cell_size);
  const GridIndex grid = grid_overlay(net, cell_size, terrain);
  const TrafficModel traffic(net, world_cfg.seed, fcfg);

  struct Request {
    std::int64_t user_id, trip_id;
    Timestamp departure;
    std::vector<LinkPath> candidates;
  };
  std::vector<Request> requests;
  for_each_jsonl(ctx.dir / kRequestsFile, [&](const Json& j, std::size_t) {
    Request r;
    r.user_id = get_field<std::int64_t>(j, "user_id", "request");
    r.trip_id = get_field<std::int64_t>(j, "trip_id", "request");
    r.departure = parse_iso8601(get_field<std::string>(j, "departure_time", "request"));
    for (auto& ids : get_field<std::vector<std::vector<LinkId>>>(j, "candidates", "request")) {
      try {
        r.candidates.push_back(net.make_path(std::move(ids)));
      } catch (const InvalidArgument& ex) {
        throw SchemaError("request " + std::to_string(r.trip_id) + ": " + ex.what());
      }
    }
    if (r.candidates.empty()) throw SchemaError("request " + std::to_string(r.trip_id) + " has no candidates");
    requests.push_back(std::move(r));
  });
  std::vector<Trajectory> trajs;
  for_each_jsonl(ctx.dir / kTrajectoriesFile, [&](const Json& j, std::size_t) { trajs.push_back(trajectory_from_json(j)); });
  if (trajs.size() != requests.size()) throw SchemaError("requests and trajectories differ in count");

  const std::vector<Split> splits = assign_splits(requests.size(), cfg.train_frac, cfg.val_frac, cfg.seed);
  auto trips_os = open_out(ctx.dir / kTripsFile);
  auto feat_os = open_out(ctx.dir / kFeaturesFile);
  std::size_t unmatched = 0, n_cands = 0, n_pos = 0;
  std::array<std::size_t, 3> split_counts{};
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const Request& req = requests[i];
    const Trajectory& tr = trajs[i];
    if (tr.user_id != req.user_id || tr.trip_id != req.trip_id)
      throw SchemaError("trajectory " + std::to_string(i) + " does not belong to request " + std::to_string(req.trip_id));
    MatchResult match;
    try {
      validate(tr);
      match = map_match(tr, net, cfg.map_match);
    } catch (const InvalidArgument& ex) {
      ++unmatched;
      ctx.log("extract: dropping trip " + std::to_string(req.trip_id) + ": " + ex.what());
      continue;
    }
    const TrafficSnapshot snap = traffic.snapshot(req.departure);
    std::vector<RouteFeatures> feats;
    for (const LinkPath& p : req.candidates)
      feats.push_back(extract_route_features(p, net, grid, snap, req.departure, fcfg));
    const auto rel = request_relative_features(feats);
    const std::size_t best = min_eta_rank(feats).front();

    TripRecord trip;
    trip.user_id = req.user_id;
    trip.trip_id = req.trip_id;
    trip.split = splits[i];
    trip.departure_time = req.departure;
    trip.traj_km = match.path.total_length / 1000.0;
    trip.matched = match.path.links;
    trip.driven_dense = extract_route_features(match.path, net, grid, snap, req.departure, fcfg).dense();
    trip.trip_ir = inconsistency_rate(net, match.path, req.candidates[best]);
    trip.n_candidates = req.candidates.size();
    trips_os << to_json(trip).dump() << '\n';
    ++split_counts[static_cast<std::size_t>(trip.split)];

    for (std::size_t c = 0; c < req.candidates.size(); ++c) {
      CandidateRecord rec;
      rec.user_id = req.user_id;
      rec.trip_id = req.trip_id;
      rec.cand_index = c;
      rec.split = trip.split;
      rec.dense = feats[c].dense();
      if (fcfg.request_relative) rec.dense.insert(rec.dense.end(), rel[c].begin(), rel[c].end());
      rec.day_of_week = feats[c].day_of_week;
      rec.hour_of_day = feats[c].hour_of_day;
      rec.steps = compact_steps(link_sequence_features(req.candidates[c], net, snap, fcfg.max_seq_len));
      const IrLabel lab = label(inconsistency_rate(net, match.path, req.candidates[c]), cfg.follow_threshold);
      rec.ir = lab.ir;
      rec.y = lab.y;
      feat_os << to_json(rec, fcfg.max_seq_len).dump() << '\n';
      ++n_cands;
      n_pos += static_cast<std::size_t>(lab.y);
    }
  }
  trips_os.close();
  feat_os.close();
  if (unmatched == requests.size()) throw SchemaError("no trajectory could be map-matched");

  std::vector<std::string> names(route_dense_names().begin(), route_dense_names().end());
  if (fcfg.request_relative) names.insert(names.end(), {"eta_ratio", "distance_ratio", "toll_excess"});
  Json summary{{"n_trips", requests.size() - unmatched},
               {"unmatched_trips", unmatched},
               {"n_candidates", n_cands},
               {"n_positive", n_pos},
               {"split_counts", {{"train", split_counts[0]}, {"val", split_counts[1]}, {"test", split_counts[2]}}},
               {"dense_names", names}};
  ctx.log("extract: " + std::to_string(n_cands) + " candidates, " + std::to_string(unmatched) + " unmatched trips");
  return finish_stage(ctx, "extract", cfg, pick_digests(gen, {kNetworkFile, kTerrainFile, kRequestsFile, kTrajectoriesFile}),
                      {kTripsFile, kFeaturesFile}, summary);
}

// ---------------------------------------------------------------------------
// cluster

RunManifest cmd_cluster(const PipelineConfig& cfg, const StageContext& ctx) {
  cfg.validate();
  const RunManifest ext = verify_stage(ctx.dir, "extract");
  const auto trips = read_trips(ctx.dir / kTripsFile);
  const auto cands = read_candidates(ctx.dir / kFeaturesFile);

  // Histories of training trips per user.
  std::map<std::int64_t, std::vector<TripHistoryItem>> history;
  std::map<std::int64_t, std::size_t> trip_pos;
  std::set<std::int64_t> users;
  for (const TripRecord& t : trips) {
    users.insert(t.user_id);
    if (t.split != Split::kTrain) continue;
    TripHistoryItem h;
    h.driven = RouteFeatures::from_dense(t.driven_dense, day_of_week(t.departure_time), hour_of_day(t.departure_time));
    h.ir = t.trip_ir;
    trip_pos[t.trip_id] = history[t.user_id].size();
    history[t.user_id].push_back(std::move(h));
  }
  for (const CandidateRecord& c : cands) {
    if (c.split != Split::kTrain) continue;
    auto& items = history.at(c.user_id);
    items.at(trip_pos.at(c.trip_id)).candidates.push_back(RouteFeatures::from_dense(c.dense, c.day_of_week, c.hour_of_day));
  }

  std::vector<std::int64_t> user_ids(users.begin(), users.end());
  std::vector<ProfileRecord> profiles;
  Matrix fit_rows;
  std::vector<std::size_t> fit_index;  // profile index of each fit row
  for (std::int64_t u : user_ids) {
    ProfileRecord r;
    r.user_id = u;
    auto it = history.find(u);
    if (it != history.end()) {
      r.profile = build_user_profile(it->second);
      r.n_train_trips = it->second.size();
      fit_index.push_back(profiles.size());
      fit_rows.push_back(r.profile.values());
    }
    profiles.push_back(r);
  }
  if (fit_rows.empty()) throw SchemaError("no training trips to build profiles from");

  const KMeansModel km = kmeans_fit(fit_rows, cfg.kmeans);
  for (std::size_t i = 0; i < fit_index.size(); ++i) profiles[fit_index[i]].profile.cluster_id = km.assignments[i];
  // Users without training history get the population mean profile.
  std::vector<double> mean(kProfileDim, 0.0);
  for (const auto& row : fit_rows)
    for (std::size_t d = 0; d < kProfileDim; ++d) mean[d] += row[d] / static_cast<double>(fit_rows.size());
  for (auto& p : profiles) {
    if (p.n_train_trips > 0) continue;
    p.profile = UserProfile::from_values(mean, kmeans_assign(km, mean));
  }

  {
    auto os = open_out(ctx.dir / kProfilesFile);
    for (const auto& p : profiles) {
      Json j{{"user_id", p.user_id}, {"n_train_trips", p.n_train_trips}, {"cluster_id", p.profile.cluster_id}};
      const auto vals = p.profile.values();
      for (std::size_t d = 0; d < kProfileDim; ++d) j[std::string(profile_names()[d])] = vals[d];
      os << j.dump() << '\n';
    }
  }
  {
    std::ostringstream os;
    os << "cluster_id,n_users";
    for (auto n : profile_names()) os << ',' << n;
    os << '\n';
    for (const ClusterSummary& s : cluster_report(km, fit_rows)) {
      os << s.cluster_id << ',' << s.n_users;
      for (std::size_t d = 0; d < kProfileDim; ++d) os << ',' << (s.empty ? "" : format_double(s.feature_means[d]));
      os << '\n';
    }
    write_text(ctx.dir / kClusterReportFile, os.str());
  }

  Matrix z;
  for (const auto& row : fit_rows) z.push_back(km.standardize(row));
  TsneConfig tcfg = cfg.tsne;
  const double max_perp = (static_cast<double>(z.size()) - 1.0) / 3.0;
  if (tcfg.perplexity >= max_perp) {
    tcfg.perplexity = std::max(1.0, max_perp - 1e-9);
    ctx.log("cluster: perplexity lowered to " + format_double(tcfg.perplexity) + " for " + std::to_string(z.size()) + " users");
  }
  Embedding2D emb;
  bool have_tsne = z.size() > 3;
  if (have_tsne) emb = tsne_project(z, tcfg);
  {
    std::ostringstream os;
    os << "user_id,x,y,cluster_id\n";
    for (std::size_t i = 0; have_tsne && i < fit_index.size(); ++i) {
      const auto& p = profiles[fit_index[i]];
      os << p.user_id << ',' << format_double(emb.points[i][0]) << ',' << format_double(emb.points[i][1]) << ','
         << p.profile.cluster_id << '\n';
    }
    write_text(ctx.dir / kTsneFile, os.str());
  }
  Json kmj{{"k", km.k},
           {"iterations", km.iterations},
           {"converged", km.converged},
           {"inertia_trace", km.inertia_trace},
           {"dropped_dims", km.dropped},
           {"warnings", km.warnings},
           {"centroids", km.centroids},
           {"mean", km.mean},
           {"stddev", km.stddev}};
  if (have_tsne) {
    kmj["tsne"] = {{"perplexity", tcfg.perplexity}, {"initial_kl", emb.initial_kl}, {"final_kl", emb.final_kl}};
  }
  write_json_file(ctx.dir / kKmeansFile, kmj);

  Json summary{{"n_users", profiles.size()}, {"n_profiled", fit_rows.size()}, {"inertia", km.inertia()},
               {"iterations", km.iterations}};
  if (have_tsne) {
    summary["tsne_initial_kl"] = emb.initial_kl;
    summary["tsne_final_kl"] = emb.final_kl;
  }
  for (const auto& w : km.warnings) ctx.log("cluster: " + w);
  return finish_stage(ctx, "cluster", cfg, pick_digests(ext, {kTripsFile, kFeaturesFile}),
                      {kProfilesFile, kClusterReportFile, kTsneFile, kKmeansFile}, summary);
}

// ---------------------------------------------------------------------------
// train

namespace {

DcrSchema schema_for(const RoadNetwork& net, std::span<const DcrSample> samples, int n_clusters) {
  DcrSchema s;
  s.dense_dim = samples.front().dense.size();
  s.profile_dim = kProfileDim;
  s.n_clusters = static_cast<std::size_t>(n_clusters);
  for (const Link& l : net.links()) s.vocab.push_back(l.id);
  std::sort(s.vocab.begin(), s.vocab.end());
  return s;
}

}  // namespace

RunManifest cmd_train(const PipelineConfig& cfg, const StageContext& ctx) {
  cfg.validate();
  const RunManifest gen = verify_stage(ctx.dir, "gen");
  const RunManifest ext = verify_stage(ctx.dir, "extract");
  const RunManifest clu = verify_stage(ctx.dir, "cluster");
  const RoadNetwork net = read_network(ctx.dir / kNetworkFile);
  const auto cands = read_candidates(ctx.dir / kFeaturesFile);
  const auto profiles = read_profiles(ctx.dir / kProfilesFile);
  const auto train = make_samples(cands, profiles, Split::kTrain);
  const auto val = make_samples(cands, profiles, Split::kVal);
  if (train.empty() || val.empty()) throw SchemaError("train or validation split is empty");
  const DcrSchema schema = schema_for(net, train, cfg.kmeans.k);

  Json summary = Json::object();
  auto run = [&](const char* name, bool use_seq, const char* ckpt, const char* report_file) {
    DcrConfig mc = cfg.model;
    mc.use_sequence = use_seq;
    TrainReport rep;
    const DcrModel model = dcr_train(train, val, mc, schema, &rep);
    model.save(ctx.dir / ckpt);
    write_json_file(ctx.dir / report_file, train_report_json(rep));
    const auto& best = rep.epochs.at(rep.best_epoch - 1);
    ctx.log(std::string("train: ") + name + " best epoch " + std::to_string(rep.best_epoch) + " val_auc " +
            format_double(best.val_auc) + " (" + format_double(rep.wall_time_s) + " s)");
    summary[name] = {{"best_epoch", rep.best_epoch},
                     {"epochs_run", rep.epochs.size()},
                     {"val_auc", std::isnan(best.val_auc) ? Json(nullptr) : Json(best.val_auc)}};
  };
  run("dcr", true, kDcrCkpt, kDcrReport);
  run("noseq", false, kNoseqCkpt, kNoseqReport);

  auto inputs = pick_digests(gen, {kNetworkFile});
  for (auto& d : pick_digests(ext, {kFeaturesFile})) inputs.push_back(d);
  for (auto& d : pick_digests(clu, {kProfilesFile})) inputs.push_back(d);
  return finish_stage(ctx, "train", cfg, inputs, {kDcrCkpt, kNoseqCkpt, kDcrReport, kNoseqReport}, summary);
}

// ---------------------------------------------------------------------------
// eval

RunManifest cmd_eval(const PipelineConfig& cfg, const StageContext& ctx) {
  cfg.validate();
  require_file(ctx.dir / kDcrCkpt);
  require_file(ctx.dir / kNoseqCkpt);
  const RunManifest ext = verify_stage(ctx.dir, "extract");
  const RunManifest clu = verify_stage(ctx.dir, "cluster");
  const RunManifest trn = verify_stage(ctx.dir, "train");
  const auto trips = read_trips(ctx.dir / kTripsFile);
  const auto cands = read_candidates(ctx.dir / kFeaturesFile);
  const auto profiles = read_profiles(ctx.dir / kProfilesFile);
  const DcrModel dcr = DcrModel::load(ctx.dir / kDcrCkpt);
  const DcrModel noseq = DcrModel::load(ctx.dir / kNoseqCkpt);

  std::map<std::int64_t, double> traj_km;
  for (const auto& t : trips)
    if (t.split == Split::kTest) traj_km[t.trip_id] = t.traj_km;

  std::vector<CandidateRecord> test;
  for (const auto& c : cands)
    if (c.split == Split::kTest) test.push_back(c);
  if (test.empty()) throw SchemaError("test split is empty");
  const auto samples = make_samples(test, profiles);
  const auto s_dcr = dcr.score(samples);
  const auto s_noseq = noseq.score(samples);

  std::vector<RequestTruth> truth;
  MethodRun m_eta{"min_eta", {}, {}}, m_noseq{"noseq", {}, {}}, m_dcr{"dcr", {}, {}};
  for (std::size_t i = 0; i < test.size();) {
    std::size_t j = i;
    while (j < test.size() && test[j].trip_id == test[i].trip_id) ++j;
    RequestTruth rt;
    std::vector<double> etas, dists;
    for (std::size_t k = i; k < j; ++k) {
      rt.candidate_ir.push_back(test[k].ir);
      rt.labels.push_back(test[k].y);
      dists.push_back(test[k].dense.at(0));
      etas.push_back(test[k].dense.at(1));
    }
    auto km = traj_km.find(test[i].trip_id);
    if (km == traj_km.end()) throw SchemaError("test candidate without a trip record: " + std::to_string(test[i].trip_id));
    rt.driven_km = km->second;
    truth.push_back(std::move(rt));

    m_eta.top1.push_back(min_eta_rank(etas, dists).front());
    // Min-ETA as a scorer: faster relative to the request's fastest is better.
    const double fastest = *std::min_element(etas.begin(), etas.end());
    std::vector<double> by_eta;
    for (double e : etas) by_eta.push_back(-e / fastest);
    m_eta.scores.push_back(std::move(by_eta));
    std::vector<double> a(s_noseq.begin() + static_cast<std::ptrdiff_t>(i), s_noseq.begin() + static_cast<std::ptrdiff_t>(j));
    std::vector<double> b(s_dcr.begin() + static_cast<std::ptrdiff_t>(i), s_dcr.begin() + static_cast<std::ptrdiff_t>(j));
    m_noseq.top1.push_back(rank_by_score(a, etas).front().index);
    m_dcr.top1.push_back(rank_by_score(b, etas).front().index);
    m_noseq.scores.push_back(std::move(a));
    m_dcr.scores.push_back(std::move(b));
    i = j;
  }
  const std::vector<MethodRun> runs{m_eta, m_noseq, m_dcr};
  const EvalReport rep = evaluate(truth, runs);
  write_text(ctx.dir / kEvalJson, rep.to_json());
  write_text(ctx.dir / kEvalTable, rep.table_csv());
  write_text(ctx.dir / kEvalStrata, rep.strata_csv());
  if (!ctx.quiet) std::cerr << rep.table_csv();

  Json summary = Json::parse(rep.to_json());
  auto inputs = pick_digests(ext, {kTripsFile, kFeaturesFile});
  for (auto& d : pick_digests(clu, {kProfilesFile})) inputs.push_back(d);
  for (auto& d : pick_digests(trn, {kDcrCkpt, kNoseqCkpt})) inputs.push_back(d);
  return finish_stage(ctx, "eval", cfg, inputs, {kEvalJson, kEvalTable, kEvalStrata}, summary);
}

// ---------------------------------------------------------------------------
// plot

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream is(require_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw SchemaError(path.string() + ": empty CSV");
  return rows;
}

double parse_num(const std::string& s, const fs::path& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError(where.string() + ": not a number: '" + s + "'");
  }
}

const std::array<const char*, 8> kPalette{"#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                                          "#66a61e", "#e6ab02", "#a6761d", "#666666"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

std::string svg_scatter(const std::vector<std::array<double, 2>>& points, const std::vector<int>& groups,
                        const std::string& title) {
  const double w = 640, h = 640, pad = 40;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!points.empty()) {
    x0 = x1 = points[0][0];
    y0 = y1 = points[0][1];
    for (const auto& p : points) {
      x0 = std::min(x0, p[0]);
      x1 = std::max(x1, p[0]);
      y0 = std::min(y0, p[1]);
      y1 = std::max(y1, p[1]);
    }
  }
  const double sx = (w - 2 * pad) / std::max(1e-12, x1 - x0), sy = (h - 2 * pad) / std::max(1e-12, y1 - y0);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << esc(title) << "</text>\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int g = i < groups.size() ? groups[i] : 0;
    os << "<circle cx=\"" << fmt(pad + (points[i][0] - x0) * sx) << "\" cy=\"" << fmt(h - pad - (points[i][1] - y0) * sy)
       << "\" r=\"3\" fill=\"" << kPalette[static_cast<std::size_t>(std::max(0, g)) % kPalette.size()]
       << "\" fill-opacity=\"0.8\"/>\n";
  }
  std::set<int> gs(groups.begin(), groups.end());
  int row = 0;
  for (int g : gs) {
    const double y = 50 + 18 * row++;
    os << "<rect x=\"" << w - 110 << "\" y=\"" << y - 10 << "\" width=\"12\" height=\"12\" fill=\""
       << kPalette[static_cast<std::size_t>(std::max(0, g)) % kPalette.size()] << "\"/>"
       << "<text x=\"" << w - 92 << "\" y=\"" << y << "\" font-family=\"sans-serif\" font-size=\"12\">cluster " << g
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_grouped_bars(const std::vector<std::string>& groups, const std::vector<std::string>& series,
                             const std::vector<std::vector<double>>& values, const std::string& title) {
  const double w = 720, h = 420, pad = 50;
  double vmax = 0.0;
  for (const auto& row : values)
    for (double v : row)
      if (std::isfinite(v)) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  const double gw = (w - 2 * pad) / std::max<std::size_t>(1, groups.size());
  const double bw = gw * 0.8 / std::max<std::size_t>(1, series.size());
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << esc(title) << "</text>\n"
     << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
     << "\" stroke=\"black\"/>\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = pad + g * gw + gw * 0.1;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = g < values.size() && s < values[g].size() ? values[g][s] : 0.0;
      if (!std::isfinite(v)) continue;
      const double bh = (h - 2 * pad) * v / vmax;
      os << "<rect x=\"" << fmt(gx + s * bw) << "\" y=\"" << fmt(h - pad - bh) << "\" width=\"" << fmt(bw * 0.95)
         << "\" height=\"" << fmt(bh) << "\" fill=\"" << kPalette[s % kPalette.size()] << "\"><title>" << esc(series[s])
         << ": " << fmt(v) << "</title></rect>\n";
    }
    os << "<text x=\"" << fmt(gx + gw * 0.4) << "\" y=\"" << h - pad + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << esc(groups[g]) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double y = 50 + 18 * s;
    os << "<rect x=\"" << w - 150 << "\" y=\"" << y - 10 << "\" width=\"12\" height=\"12\" fill=\""
       << kPalette[s % kPalette.size()] << "\"/><text x=\"" << w - 132 << "\" y=\"" << y
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << esc(series[s]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

RunManifest cmd_plot(const PipelineConfig& cfg, const StageContext& ctx) {
  const RunManifest clu = verify_stage(ctx.dir, "cluster");
  const RunManifest ev = verify_stage(ctx.dir, "eval");

  const auto tsne = read_csv(ctx.dir / kTsneFile);
  std::vector<std::array<double, 2>> pts;
  std::vector<int> groups;
  for (std::size_t i = 1; i < tsne.size(); ++i) {
    if (tsne[i].size() != 4) throw SchemaError("tsne.csv: expected 4 columns");
    pts.push_back({parse_num(tsne[i][1], kTsneFile), parse_num(tsne[i][2], kTsneFile)});
    groups.push_back(static_cast<int>(parse_num(tsne[i][3], kTsneFile)));
  }
  write_text(ctx.dir / kTsneSvg, svg_scatter(pts, groups, "User profiles (t-SNE)"));

  const auto strata = read_csv(ctx.dir / kEvalStrata);
  std::vector<std::string> series;
  const std::vector<std::string> group_names{"short", "medium", "long"};
  std::vector<std::vector<double>> values(group_names.size());
  for (std::size_t i = 1; i < strata.size(); ++i) {
    if (strata[i].size() != 5) throw SchemaError("eval_strata.csv: expected 5 columns");
    const std::string& method = strata[i][0];
    if (std::find(series.begin(), series.end(), method) == series.end()) series.push_back(method);
    const auto g = static_cast<std::size_t>(
        std::find(group_names.begin(), group_names.end(), strata[i][1]) - group_names.begin());
    if (g >= group_names.size()) throw SchemaError("eval_strata.csv: unknown stratum " + strata[i][1]);
    const std::string& cell = strata[i][4];
    values[g].push_back(cell.empty() ? std::nan("") : 100.0 * parse_num(cell, kEvalStrata));
  }
  write_text(ctx.dir / kStrataSvg, svg_grouped_bars(group_names, series, values, "mean_IR (%) by trip distance"));

  auto inputs = pick_digests(clu, {kTsneFile});
  for (auto& d : pick_digests(ev, {kEvalStrata})) inputs.push_back(d);
  return finish_stage(ctx, "plot", cfg, inputs, {kTsneSvg, kStrataSvg}, Json::object());
}

}  // namespace routerank
