#include <cmath>
#include <numeric>

#include "doctest.h"
#include "routerank/common.hpp"
#include "routerank/rng.hpp"
#include "routerank/userclust.hpp"

using namespace routerank;

namespace {

// Gaussian blobs; row i belongs to blob i % k.
Matrix blobs(std::size_t n, int k, double spread, std::uint64_t seed, std::size_t dim = 3) {
  Rng rng(seed);
  Matrix centers(static_cast<std::size_t>(k), std::vector<double>(dim));
  for (int c = 0; c < k; ++c)
    for (std::size_t d = 0; d < dim; ++d) centers[c][d] = 10.0 * static_cast<double>((c * 7 + d * 3) % 5);
  Matrix x;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row = centers[i % static_cast<std::size_t>(k)];
    for (double& v : row) v += rng.normal(0.0, spread);
    x.push_back(row);
  }
  return x;
}

double inertia_oracle(const KMeansModel& m, const Matrix& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto z = m.standardize(x[i]);
    const auto& c = m.centroids[static_cast<std::size_t>(m.assignments[i])];
    for (std::size_t d = 0; d < z.size(); ++d) s += (z[d] - c[d]) * (z[d] - c[d]);
  }
  return s;
}

bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
  return true;
}

}  // namespace

TEST_CASE("separated blobs are recovered") {
  const auto x = blobs(120, 4, 0.5, 1);
  KMeansConfig cfg;
  cfg.k = 4;
  cfg.seed = 3;
  const auto m = kmeans_fit(x, cfg);
  std::vector<int> truth;
  for (std::size_t i = 0; i < x.size(); ++i) truth.push_back(static_cast<int>(i % 4));
  CHECK(same_partition(m.assignments, truth));
  CHECK(m.converged);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(kmeans_assign(m, x[i]) == m.assignments[i]);
}

TEST_CASE("inertia never increases and matches a recomputation") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto x = blobs(200, 5, 6.0, seed);
    KMeansConfig cfg;
    cfg.k = 6;
    cfg.seed = seed;
    cfg.n_init = 1;
    const auto m = kmeans_fit(x, cfg);
    for (std::size_t t = 1; t < m.inertia_trace.size(); ++t) CHECK(m.inertia_trace[t] <= m.inertia_trace[t - 1] + 1e-9);
    CHECK(m.inertia() == doctest::Approx(inertia_oracle(m, x)).epsilon(1e-10));
  }
}

TEST_CASE("restarts never do worse than the first run") {
  const auto x = blobs(150, 5, 8.0, 4);
  KMeansConfig one;
  one.k = 5;
  one.seed = 9;
  one.n_init = 1;
  KMeansConfig many = one;
  many.n_init = 10;
  CHECK(kmeans_fit(x, many).inertia() <= kmeans_fit(x, one).inertia());
}

TEST_CASE("row permutation leaves the clustering unchanged") {
  const auto x = blobs(90, 3, 5.0, 2);
  KMeansConfig cfg;
  cfg.k = 3;
  cfg.seed = 5;
  const auto base = kmeans_fit(x, cfg);
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(77);
  rng.shuffle(perm);
  Matrix px;
  for (std::size_t i : perm) px.push_back(x[i]);
  const auto shuffled = kmeans_fit(px, cfg);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(shuffled.assignments[i] == base.assignments[perm[i]]);
  CHECK(shuffled.inertia() == base.inertia());
}

TEST_CASE("zero-variance dimensions are dropped") {
  auto x = blobs(40, 2, 1.0, 6);
  for (auto& row : x) row.push_back(4.2);
  KMeansConfig cfg;
  cfg.k = 2;
  const auto m = kmeans_fit(x, cfg);
  CHECK(m.dropped == std::vector<std::size_t>{3});
  CHECK(m.retained.size() == 3);
  CHECK(m.warnings.size() == 1);
  CHECK(m.centroids.front().size() == 3);
}

TEST_CASE("kmeans preconditions") {
  const auto x = blobs(5, 1, 1.0, 1);
  KMeansConfig cfg;
  cfg.k = 6;
  CHECK_THROWS_AS(kmeans_fit(x, cfg), InvalidArgument);
  cfg.k = 0;
  CHECK_THROWS_AS(kmeans_fit(x, cfg), InvalidArgument);
  cfg.k = 2;
  cfg.n_init = 0;
  CHECK_THROWS_AS(kmeans_fit(x, cfg), InvalidArgument);
  cfg.n_init = 1;
  auto ragged = x;
  ragged[2].pop_back();
  CHECK_THROWS_AS(kmeans_fit(ragged, cfg), InvalidArgument);
  const auto m = kmeans_fit(x, cfg);
  std::vector<double> short_row{1.0};
  CHECK_THROWS_AS(kmeans_assign(m, short_row), InvalidArgument);
}

TEST_CASE("cluster report means") {
  const auto x = blobs(60, 3, 1.0, 8);
  KMeansConfig cfg;
  cfg.k = 3;
  const auto m = kmeans_fit(x, cfg);
  const auto rep = cluster_report(m, x);
  REQUIRE(rep.size() == 3);
  std::size_t total = 0;
  for (const auto& r : rep) {
    total += r.n_users;
    std::vector<double> mean(3, 0.0);
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (m.assignments[i] == r.cluster_id) {
        ++cnt;
        for (std::size_t d = 0; d < 3; ++d) mean[d] += x[i][d];
      }
    CHECK(cnt == r.n_users);
    for (std::size_t d = 0; d < 3; ++d) CHECK(r.feature_means[d] == doctest::Approx(mean[d] / cnt));
  }
  CHECK(total == x.size());
}

TEST_CASE("affinities hit the target perplexity") {
  const auto x = blobs(60, 3, 2.0, 10);
  const auto a = conditional_affinities(x, 10.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = std::accumulate(a.p[i].begin(), a.p[i].end(), 0.0);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.p[i][i] == 0.0);
    // entropy oracle
    double h = 0.0;
    for (double p : a.p[i])
      if (p > 0.0) h -= p * std::log2(p);
    CHECK(std::pow(2.0, h) == doctest::Approx(10.0).epsilon(1e-3));
    CHECK(a.perplexity[i] == doctest::Approx(10.0).epsilon(1e-3));
  }
  CHECK_THROWS_AS(conditional_affinities(x, 100.0), InvalidArgument);
}

TEST_CASE("t-SNE lowers KL and is deterministic") {
  const auto x = blobs(60, 3, 2.0, 11, 5);
  TsneConfig cfg;
  cfg.perplexity = 10.0;
  cfg.iterations = 400;
  cfg.seed = 4;
  const auto e = tsne_project(x, cfg);
  CHECK(e.points.size() == x.size());
  CHECK(e.final_kl < e.initial_kl);
  CHECK(e.final_kl >= 0.0);
  const auto again = tsne_project(x, cfg);
  CHECK(again.points == e.points);
}
