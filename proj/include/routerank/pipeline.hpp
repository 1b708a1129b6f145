#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "routerank/dcrmodel.hpp"
#include "routerank/evalkit.hpp"
#include "routerank/json_io.hpp"
#include "routerank/synthworld.hpp"
#include "routerank/userclust.hpp"

namespace routerank {

inline constexpr const char* kToolVersion = "0.1.0";

/// Everything the pipeline reads from the config file.
struct PipelineConfig {
  std::uint64_t seed = 0;
  WorldConfig world;
  MapMatchConfig map_match;
  double follow_threshold = kDefaultFollowThreshold;
  double train_frac = 0.8;
  double val_frac = 0.1;
  KMeansConfig kmeans;
  TsneConfig tsne;
  DcrConfig model;

  /// Pushes `seed` into every seeded sub-config.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

void to_json(Json& j, const PipelineConfig& c);
void from_json(const Json& j, PipelineConfig& c);

/// Reads a config file; an empty path yields the defaults.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifests

std::string sha256_file(const std::filesystem::path& path);

struct FileDigest {
  std::string path;  // relative to the run directory
  std::string sha256;
};

struct RunManifest {
  std::string command;
  std::string tool_version = kToolVersion;
  std::uint64_t seed = 0;
  Json config;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
  Json summary = Json::object();
};

void to_json(Json& j, const RunManifest& m);
void from_json(const Json& j, RunManifest& m);

std::filesystem::path manifest_path(const std::filesystem::path& dir, const std::string& command);

/// Loads `<dir>/<command>.manifest.json` and re-hashes every output it
/// lists. MissingInput when the manifest or a file is absent; SchemaError on
/// a digest mismatch.
RunManifest verify_stage(const std::filesystem::path& dir, const std::string& command);

// ---------------------------------------------------------------------------
// Stages. Each reads upstream artifacts from `dir`, writes its own outputs
// and `<command>.manifest.json` into `dir`.

struct StageContext {
  std::filesystem::path dir;
  bool quiet = false;
  void log(const std::string& msg) const;
};

/// World, requests, trajectories, ground truth and users.
RunManifest cmd_gen(const PipelineConfig& cfg, const StageContext& ctx);
/// Map matching, labels, per-candidate features, trip split.
RunManifest cmd_extract(const PipelineConfig& cfg, const StageContext& ctx);
/// Profiles from training trips, K-Means, t-SNE, cluster report.
RunManifest cmd_cluster(const PipelineConfig& cfg, const StageContext& ctx);
/// DCR and the no-sequence ablation.
RunManifest cmd_train(const PipelineConfig& cfg, const StageContext& ctx);
/// Min-ETA / no-sequence / DCR on the test split.
RunManifest cmd_eval(const PipelineConfig& cfg, const StageContext& ctx);
/// SVG renderings of the t-SNE and strata CSVs.
RunManifest cmd_plot(const PipelineConfig& cfg, const StageContext& ctx);

// ---------------------------------------------------------------------------
// Dataset records shared by the stages (and the acceptance suite).

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

/// Deterministic exact-proportion split of trip ids.
std::vector<Split> assign_splits(std::size_t n_trips, double train_frac, double val_frac, std::uint64_t seed);

struct TripRecord {
  std::int64_t user_id = 0;
  std::int64_t trip_id = 0;
  Split split = Split::kTrain;
  Timestamp departure_time = 0;
  double traj_km = 0.0;
  std::vector<LinkId> matched;
  std::vector<double> driven_dense;  // route dense features of the matched path
  double trip_ir = 0.0;              // matched path vs the min-ETA candidate
  std::size_t n_candidates = 0;
};

struct CandidateRecord {
  std::int64_t user_id = 0;
  std::int64_t trip_id = 0;
  std::size_t cand_index = 0;
  Split split = Split::kTrain;
  std::vector<double> dense;
  int day_of_week = 0;
  int hour_of_day = 0;
  std::vector<SeqStep> steps;
  double ir = 0.0;
  int y = 0;
};

Json to_json(const TripRecord& r);
TripRecord trip_record_from_json(const Json& j);
Json to_json(const CandidateRecord& r, std::size_t max_seq_len);
CandidateRecord candidate_record_from_json(const Json& j);

std::vector<TripRecord> read_trips(const std::filesystem::path& path);
std::vector<CandidateRecord> read_candidates(const std::filesystem::path& path);

struct ProfileRecord {
  std::int64_t user_id = 0;
  UserProfile profile;
  std::size_t n_train_trips = 0;
};

std::vector<ProfileRecord> read_profiles(const std::filesystem::path& path);

/// Users file: {"user_id":..,"archetype":..,"archetype_name":..,"weights":{...}}
std::vector<SynthUser> read_users(const std::filesystem::path& path);

/// Builds model samples for every candidate of the given split (all splits
/// when `only` is empty), in file order.
std::vector<DcrSample> make_samples(std::span<const CandidateRecord> cands, std::span<const ProfileRecord> profiles,
                                    std::optional<Split> only = std::nullopt);

// ---------------------------------------------------------------------------
// SVG helpers (plain text templates).

std::string svg_scatter(const std::vector<std::array<double, 2>>& points, const std::vector<int>& groups,
                        const std::string& title);
std::string svg_grouped_bars(const std::vector<std::string>& groups, const std::vector<std::string>& series,
                             const std::vector<std::vector<double>>& values, const std::string& title);

}  // namespace routerank
