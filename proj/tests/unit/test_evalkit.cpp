#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "routerank/evalkit.hpp"
#include "routerank/rng.hpp"
#include "routerank/trajpath.hpp"

using namespace routerank;

namespace {

double auc_pairs(const std::vector<double>& s, const std::vector<double>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 0.0 || y[j] != 0.0) continue;
      den += 1.0;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return num / den;
}

}  // namespace

TEST_CASE("auc equals pair counting") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s, y;
    for (int i = 0; i < 200; ++i) {
      // coarse scores so ties are common
      s.push_back(static_cast<double>(rng.below(20)) / 20.0);
      y.push_back(rng.uniform() < 0.3 ? 1.0 : 0.0);
    }
    const auto a = auc(s, y);
    REQUIRE(a.has_value());
    CHECK(*a == doctest::Approx(auc_pairs(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("auc edge cases") {
  std::vector<double> s{0.1, 0.2, 0.3}, ones{1, 1, 1}, zeros{0, 0, 0};
  CHECK_FALSE(auc(s, ones).has_value());
  CHECK_FALSE(auc(s, zeros).has_value());
  std::vector<double> y{0, 0, 1};
  CHECK(*auc(s, y) == 1.0);
  std::vector<double> flat{0.5, 0.5, 0.5};
  CHECK(*auc(flat, y) == 0.5);
  std::vector<double> shorter{1, 0};
  CHECK_THROWS_AS(auc(s, shorter), InvalidArgument);
}

TEST_CASE("mean ir recomputed from paths") {
  const auto net = fixtures::lattice(4, 4);
  Rng rng(3);
  std::vector<LinkPath> top1, driven;
  std::vector<double> direct;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> w;
    for (std::size_t k = 0; k < net.links().size(); ++k) w.push_back(rng.uniform(1, 2));
    const auto a = shortest_path(net, 0, 15, w)->path;
    for (auto& v : w) v = rng.uniform(1, 2);
    const auto b = shortest_path(net, 0, 15, w)->path;
    top1.push_back(a);
    driven.push_back(b);
    direct.push_back(inconsistency_rate(net, b, a));
  }
  const double want = std::accumulate(direct.begin(), direct.end(), 0.0) / 50.0;
  CHECK(mean_ir(net, top1, driven) == doctest::Approx(want).epsilon(1e-12));
  CHECK(mean_ir(direct) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("strata boundaries") {
  CHECK(stratum_of(0.0) == Stratum::kShort);
  CHECK(stratum_of(9.999) == Stratum::kShort);
  CHECK(stratum_of(10.0) == Stratum::kMedium);
  CHECK(stratum_of(19.999) == Stratum::kMedium);
  CHECK(stratum_of(20.0) == Stratum::kLong);
  std::vector<double> km{25, 3, 10, 12, 40, 9};
  const auto s = stratify(km);
  CHECK(s[0] == std::vector<std::size_t>{1, 5});
  CHECK(s[1] == std::vector<std::size_t>{2, 3});
  CHECK(s[2] == std::vector<std::size_t>{0, 4});
}

TEST_CASE("min-eta ordering and ties") {
  std::vector<double> eta{30, 20, 20, 10}, dist{1, 5, 4, 9};
  CHECK(min_eta_rank(eta, dist) == std::vector<std::size_t>{3, 2, 1, 0});
  std::vector<double> same{5, 5}, same_d{2, 2};
  CHECK(min_eta_rank(same, same_d) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("per-stratum counts sum to the test size") {
  Rng rng(8);
  std::vector<RequestTruth> truth;
  MethodRun scored{"model", {}, {}};
  MethodRun plain{"baseline", {}, {}};
  for (int r = 0; r < 300; ++r) {
    RequestTruth t;
    t.driven_km = rng.uniform(0, 40);
    for (int c = 0; c < 5; ++c) {
      t.candidate_ir.push_back(rng.uniform());
      t.labels.push_back(t.candidate_ir.back() <= 0.05 ? 1.0 : 0.0);
    }
    t.labels[rng.below(5)] = 1.0;
    std::vector<double> sc;
    for (int c = 0; c < 5; ++c) sc.push_back(rng.uniform());
    scored.top1.push_back(static_cast<std::size_t>(std::max_element(sc.begin(), sc.end()) - sc.begin()));
    scored.scores.push_back(sc);
    plain.top1.push_back(0);
    truth.push_back(t);
  }
  const auto rep = evaluate(truth, std::vector<MethodRun>{plain, scored});
  CHECK(rep.n_requests == 300);
  CHECK(rep.stratum_sizes[0] + rep.stratum_sizes[1] + rep.stratum_sizes[2] == 300);
  for (const auto& m : rep.methods) {
    CHECK(m.overall.n == 300);
    CHECK(m.strata[0].n + m.strata[1].n + m.strata[2].n == 300);
    // overall mean IR is the size-weighted mean of the strata
    double acc = 0.0;
    for (const auto& s : m.strata) acc += s.mean_ir * static_cast<double>(s.n);
    CHECK(acc / 300.0 == doctest::Approx(m.overall.mean_ir).epsilon(1e-12));
  }
  CHECK_FALSE(rep.methods[0].overall.auc.has_value());
  CHECK(rep.methods[1].overall.auc.has_value());

  double base = 0.0;
  for (const auto& t : truth) base += t.candidate_ir[0];
  CHECK(rep.methods[0].overall.mean_ir == doctest::Approx(base / 300.0).epsilon(1e-12));

  const auto table = rep.table_csv();
  CHECK(table.rfind("method,test_size,auc,mean_ir\n", 0) == 0);
  CHECK(table.find("baseline,300,,") != std::string::npos);
  CHECK(rep.strata_csv().rfind("method,stratum,n,auc,mean_ir\n", 0) == 0);

  plain.top1.pop_back();
  CHECK_THROWS_AS(evaluate(truth, std::vector<MethodRun>{plain}), InvalidArgument);
}
