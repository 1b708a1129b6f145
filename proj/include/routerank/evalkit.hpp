#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "routerank/featset.hpp"
#include "routerank/roadnet.hpp"

namespace routerank {

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Absent when either class is missing. Labels are
/// 0/1 (any nonzero label counts as positive).
std::optional<double> auc(std::span<const double> scores, std::span<const double> labels);

/// Mean of per-request inconsistency rates.
double mean_ir(std::span<const double> top1_irs);

/// Recomputes each top-1 pick's IR against its request's driven path.
double mean_ir(const RoadNetwork& network, std::span<const LinkPath> top1, std::span<const LinkPath> driven);

enum class Stratum { kShort = 0, kMedium = 1, kLong = 2 };
inline constexpr std::size_t kNumStrata = 3;
inline constexpr double kShortMaxKm = 10.0;
inline constexpr double kMediumMaxKm = 20.0;

std::string_view to_string(Stratum s);
/// short d < 10, medium 10 <= d < 20, long d >= 20 (km).
Stratum stratum_of(double driven_km);

/// Request indices per stratum, each in ascending order.
std::array<std::vector<std::size_t>, kNumStrata> stratify(std::span<const double> driven_km);

/// Candidate order by ascending ETA, then distance, then index.
std::vector<std::size_t> min_eta_rank(std::span<const double> etas, std::span<const double> distances);
std::vector<std::size_t> min_eta_rank(std::span<const RouteFeatures> candidates);

// ---------------------------------------------------------------------------

/// Ground truth for one test request.
struct RequestTruth {
  std::vector<double> candidate_ir;  // IR of each candidate vs the driven path
  std::vector<double> labels;        // 0/1 per candidate
  double driven_km = 0.0;
};

/// One method's output on the test requests.
struct MethodRun {
  std::string name;
  std::vector<std::size_t> top1;  // chosen candidate per request
  /// Per-request candidate scores; empty for methods without a score.
  std::vector<std::vector<double>> scores;
};

struct MetricRow {
  std::optional<double> auc;
  double mean_ir = 0.0;
  std::size_t n = 0;
};

struct MethodReport {
  std::string name;
  MetricRow overall;
  std::array<MetricRow, kNumStrata> strata;
};

struct EvalReport {
  std::vector<MethodReport> methods;
  std::array<std::size_t, kNumStrata> stratum_sizes{};
  std::size_t n_requests = 0;

  std::string to_json() const;
  /// method,test_size,auc,mean_ir
  std::string table_csv() const;
  /// method,stratum,n,auc,mean_ir
  std::string strata_csv() const;
};

EvalReport evaluate(std::span<const RequestTruth> truth, std::span<const MethodRun> runs);

}  // namespace routerank
