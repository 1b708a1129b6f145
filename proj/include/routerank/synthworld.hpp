#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "routerank/featset.hpp"
#include "routerank/rng.hpp"
#include "routerank/roadnet.hpp"
#include "routerank/timeutil.hpp"
#include "routerank/trajpath.hpp"

namespace routerank {

inline constexpr int kNumArchetypes = 6;

/// Utility weights of a route-choice archetype. Positive weights reward the
/// signal, except eta/distance/toll/congestion which are costs.
struct ArchetypeWeights {
  double eta = 0.0;           // per unit of relative ETA excess over the fastest candidate
  double distance = 0.0;      // per unit of relative distance excess
  double toll = 0.0;          // per toll unit / 5
  double road_quality = 0.0;  // length-weighted link surface quality (see link_quality)
  double highway = 0.0;       // highway length fraction
  double scenic = 0.0;        // water + green cell fraction
  double congestion = 0.0;    // congestion met early in the trip (distance-decayed)
  friend bool operator==(const ArchetypeWeights&, const ArchetypeWeights&) = default;
};

struct Archetype {
  std::string_view name;
  ArchetypeWeights weights;
};

/// toll_sensitive, fastest, road_quality, highway, scenic, congestion_averse
const std::array<Archetype, kNumArchetypes>& builtin_archetypes();

struct WorldConfig {
  // Road lattice.
  int grid_rows = 20;
  int grid_cols = 20;
  double spacing = 1400.0;  // m
  /// Add a diagonal in lattice cell (r, c) when (r + c) % diagonal_every == 0
  /// (0 disables diagonals).
  int diagonal_every = 3;
  double cell_size = 250.0;

  // Population.
  int n_users = 1000;
  int trips_per_user = 20;
  int candidates_k = 11;

  // Behaviour.
  double temperature = 0.5;
  double weight_jitter = 0.15;  // log-normal sigma per weight
  double p_detour = 0.15;
  /// Share of trips aimed at the short / medium / long distance bands.
  std::array<double, 3> distance_mix{0.60, 0.25, 0.15};
  double peak_share = 0.45;

  // Calendar.
  std::string start_date = "2024-03-04";  // a Monday
  int days = 28;

  // GPS.
  double gps_sigma = 5.0;      // m
  double gps_interval = 10.0;  // s

  std::uint64_t seed = 0;
  FeatureConfig features;

  void validate() const;
};

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);

struct SynthUser {
  std::int64_t user_id = 0;
  int archetype = 0;
  ArchetypeWeights weights;
};

struct World {
  RoadNetwork network;
  std::vector<TerrainCell> terrain;
  GridIndex grid;
  std::vector<SynthUser> users;
  /// Per-link surface quality in [0, 1] (dense link order). Hidden: it is
  /// not part of any feature, only link ids reveal it.
  std::vector<double> link_quality;
};

/// Lattice road graph with optional diagonals, terrain, POIs and users.
World generate_world(const WorldConfig& cfg);

/// Half from the lane count (>= 4 lanes), half a seeded good/bad surface per road.
std::vector<double> link_quality(const RoadNetwork& network, std::uint64_t seed);

/// Directed link count of the lattice: 2 * (rows * (cols - 1) + cols * (rows - 1))
/// plus two per diagonal cell.
std::size_t expected_link_count(const WorldConfig& cfg);

// ---------------------------------------------------------------------------

/// Congestion per (link, day, hour), derived from a hash of the seed so any
/// stage can reproduce it without storing it.
class TrafficModel {
 public:
  TrafficModel(const RoadNetwork& network, std::uint64_t seed, FeatureConfig features = {});
  CongestionLevel level(std::size_t link_idx, Timestamp t) const;
  TrafficSnapshot snapshot(Timestamp t) const;

 private:
  std::uint64_t seed_;
  FeatureConfig features_;
  std::vector<double> busyness_;  // per link, roughly in [0.4, 1.6]
};

/// Travel-time link weights for a snapshot.
std::vector<double> travel_time_weights(const RoadNetwork& network, const TrafficSnapshot& traffic,
                                        const FeatureConfig& cfg = {});

/// Route signals the utility is defined over.
struct UtilityInputs {
  double rel_eta = 0.0;
  double rel_distance = 0.0;
  double toll = 0.0;
  double road_quality = 0.0;
  double highway = 0.0;
  double scenic = 0.0;
  double early_congestion = 0.0;
};

std::vector<UtilityInputs> utility_inputs(std::span<const LinkPath> candidates, std::span<const RouteFeatures> features,
                                          const RoadNetwork& network, const TrafficSnapshot& traffic,
                                          std::span<const double> link_quality);
double utility(const ArchetypeWeights& w, const UtilityInputs& in);

/// Gumbel-max draw from softmax(utility / temperature); plain argmax when
/// temperature is 0. Ties go to the lowest index.
std::size_t choose_route(std::span<const double> utilities, double temperature, Rng& rng);

// ---------------------------------------------------------------------------

struct SynthTrip {
  std::int64_t user_id = 0;
  std::int64_t trip_id = 0;
  Timestamp departure_time = 0;
  NodeId origin = 0;
  NodeId dest = 0;
  std::vector<LinkPath> candidates;
  std::size_t chosen = 0;
  bool detoured = false;
  LinkPath driven;
  Trajectory trajectory;
};

struct SynthDataset {
  std::vector<SynthTrip> trips;  // ordered by (user_id, trip_id)
};

/// Trips for every user; each trip is a pure function of (seed, user, trip).
SynthDataset generate_trips(const World& world, const WorldConfig& cfg);

/// One trip (exposed for tests).
SynthTrip generate_trip(const World& world, const WorldConfig& cfg, const TrafficModel& traffic, const SynthUser& user,
                        std::int64_t trip_id);

/// Replaces a short stretch of `path` by the fastest route around it.
/// Returns nullopt when no alternative exists.
std::optional<LinkPath> local_detour(const LinkPath& path, const RoadNetwork& network, std::span<const double> weights,
                                     Rng& rng);

/// GPS samples every `interval` seconds along the path at constant speed per
/// link (`link_speeds` aligned with path.links), plus the final endpoint,
/// with isotropic Gaussian noise of `sigma` meters.
Trajectory synthesize_gps(const LinkPath& path, const RoadNetwork& network, std::span<const double> link_speeds,
                          double sigma, double interval, std::uint64_t seed, Timestamp departure_time = 0);

}  // namespace routerank
