#include "routerank/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>

#include "routerank/json_io.hpp"
#include "routerank/trajpath.hpp"

namespace routerank {

std::optional<double> auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("auc: scores/labels size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  for (double s : scores)
    if (std::isnan(s)) throw InvalidArgument("auc: NaN score");
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk groups of equal score in ascending order; every positive beats the
  // negatives strictly below its group and ties with those inside it.
  std::uint64_t pos = 0, neg = 0, twice_wins = 0;
  std::uint64_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t gp = 0, gn = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] != 0.0 ? gp : gn) += 1;
      ++j;
    }
    twice_wins += gp * (2 * neg_below + gn);
    neg_below += gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double mean_ir(std::span<const double> top1_irs) {
  if (top1_irs.empty()) throw InvalidArgument("mean_ir: no requests");
  double sum = 0.0;
  for (double v : top1_irs) sum += v;
  return sum / static_cast<double>(top1_irs.size());
}

double mean_ir(const RoadNetwork& network, std::span<const LinkPath> top1, std::span<const LinkPath> driven) {
  if (top1.size() != driven.size()) throw InvalidArgument("mean_ir: every request needs a driven path");
  std::vector<double> irs;
  irs.reserve(top1.size());
  for (std::size_t i = 0; i < top1.size(); ++i) {
    if (driven[i].empty()) throw InvalidArgument("mean_ir: request " + std::to_string(i) + " has no trajectory");
    irs.push_back(inconsistency_rate(network, driven[i], top1[i]));
  }
  return mean_ir(irs);
}

std::string_view to_string(Stratum s) {
  switch (s) {
    case Stratum::kShort: return "short";
    case Stratum::kMedium: return "medium";
    case Stratum::kLong: return "long";
  }
  return "?";
}

Stratum stratum_of(double driven_km) {
  if (driven_km < kShortMaxKm) return Stratum::kShort;
  if (driven_km < kMediumMaxKm) return Stratum::kMedium;
  return Stratum::kLong;
}

std::array<std::vector<std::size_t>, kNumStrata> stratify(std::span<const double> driven_km) {
  std::array<std::vector<std::size_t>, kNumStrata> out;
  for (std::size_t i = 0; i < driven_km.size(); ++i)
    out[static_cast<std::size_t>(stratum_of(driven_km[i]))].push_back(i);
  return out;
}

std::vector<std::size_t> min_eta_rank(std::span<const double> etas, std::span<const double> distances) {
  if (etas.size() != distances.size()) throw InvalidArgument("min_eta_rank: size mismatch");
  if (etas.empty()) throw InvalidArgument("min_eta_rank: no candidates");
  std::vector<std::size_t> order(etas.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (etas[a] != etas[b]) return etas[a] < etas[b];
    if (distances[a] != distances[b]) return distances[a] < distances[b];
    return a < b;
  });
  return order;
}

std::vector<std::size_t> min_eta_rank(std::span<const RouteFeatures> candidates) {
  std::vector<double> etas, dists;
  for (const auto& c : candidates) {
    etas.push_back(c.eta);
    dists.push_back(c.distance);
  }
  return min_eta_rank(etas, dists);
}

// ---------------------------------------------------------------------------

namespace {

MetricRow metrics_over(std::span<const RequestTruth> truth, const MethodRun& run, std::span<const std::size_t> idx) {
  MetricRow row;
  row.n = idx.size();
  if (idx.empty()) return row;
  std::vector<double> irs;
  std::vector<double> scores, labels;
  for (std::size_t r : idx) {
    irs.push_back(truth[r].candidate_ir[run.top1[r]]);
    if (!run.scores.empty()) {
      scores.insert(scores.end(), run.scores[r].begin(), run.scores[r].end());
      labels.insert(labels.end(), truth[r].labels.begin(), truth[r].labels.end());
    }
  }
  row.mean_ir = mean_ir(irs);
  if (!run.scores.empty()) row.auc = auc(scores, labels);
  return row;
}

std::string csv_auc(const std::optional<double>& a) { return a ? format_double(*a) : ""; }

}  // namespace

EvalReport evaluate(std::span<const RequestTruth> truth, std::span<const MethodRun> runs) {
  if (truth.empty()) throw InvalidArgument("evaluate: no test requests");
  EvalReport rep;
  rep.n_requests = truth.size();
  std::vector<double> km;
  for (const auto& t : truth) {
    if (t.candidate_ir.empty() || t.candidate_ir.size() != t.labels.size())
      throw InvalidArgument("evaluate: request without candidates or with mismatched labels");
    km.push_back(t.driven_km);
  }
  const auto strata = stratify(km);
  for (std::size_t s = 0; s < kNumStrata; ++s) rep.stratum_sizes[s] = strata[s].size();
  std::vector<std::size_t> all(truth.size());
  std::iota(all.begin(), all.end(), 0);

  for (const MethodRun& run : runs) {
    if (run.top1.size() != truth.size()) throw InvalidArgument("evaluate: method '" + run.name + "' misses requests");
    if (!run.scores.empty() && run.scores.size() != truth.size())
      throw InvalidArgument("evaluate: method '" + run.name + "' scores do not cover all requests");
    for (std::size_t r = 0; r < truth.size(); ++r) {
      if (run.top1[r] >= truth[r].candidate_ir.size())
        throw InvalidArgument("evaluate: method '" + run.name + "' picks a nonexistent candidate");
      if (!run.scores.empty() && run.scores[r].size() != truth[r].labels.size())
        throw InvalidArgument("evaluate: method '" + run.name + "' score count mismatch");
    }
    MethodReport mr;
    mr.name = run.name;
    mr.overall = metrics_over(truth, run, all);
    for (std::size_t s = 0; s < kNumStrata; ++s) mr.strata[s] = metrics_over(truth, run, strata[s]);
    rep.methods.push_back(std::move(mr));
  }
  return rep;
}

std::string EvalReport::to_json() const {
  auto row_json = [](const MetricRow& r) {
    Json j{{"mean_ir", r.mean_ir}, {"n", r.n}};
    j["auc"] = r.auc ? Json(*r.auc) : Json(nullptr);
    return j;
  };
  Json j;
  j["n_requests"] = n_requests;
  Json ms = Json::array();
  for (const auto& m : methods) {
    Json mj = row_json(m.overall);
    mj["method"] = m.name;
    Json st = Json::object();
    for (std::size_t s = 0; s < kNumStrata; ++s) st[std::string(to_string(static_cast<Stratum>(s)))] = row_json(m.strata[s]);
    mj["strata"] = st;
    ms.push_back(mj);
  }
  j["methods"] = ms;
  Json sizes = Json::object();
  for (std::size_t s = 0; s < kNumStrata; ++s) sizes[std::string(to_string(static_cast<Stratum>(s)))] = stratum_sizes[s];
  j["stratum_sizes"] = sizes;
  return j.dump(2) + "\n";
}

std::string EvalReport::table_csv() const {
  std::ostringstream os;
  os << "method,test_size,auc,mean_ir\n";
  for (const auto& m : methods)
    os << m.name << ',' << m.overall.n << ',' << csv_auc(m.overall.auc) << ',' << format_double(m.overall.mean_ir) << '\n';
  return os.str();
}

std::string EvalReport::strata_csv() const {
  std::ostringstream os;
  os << "method,stratum,n,auc,mean_ir\n";
  for (const auto& m : methods)
    for (std::size_t s = 0; s < kNumStrata; ++s) {
      const MetricRow& r = m.strata[s];
      os << m.name << ',' << to_string(static_cast<Stratum>(s)) << ',' << r.n << ',' << csv_auc(r.auc) << ','
         << (r.n ? format_double(r.mean_ir) : "") << '\n';
    }
  return os.str();
}

}  // namespace routerank
