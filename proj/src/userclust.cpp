#include "routerank/userclust.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "routerank/common.hpp"
#include "routerank/rng.hpp"

namespace routerank {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int nearest(const Matrix& centroids, std::span<const double> x, double* out_dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_dist(centroids[c], x);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (out_dist) *out_dist = best_d;
  return best;
}

struct LloydRun {
  Matrix centroids;
  std::vector<int> assign;
  std::vector<double> inertia_trace;
  int iterations = 0;
  bool converged = false;
};

/// k-means++ seeding followed by Lloyd iterations on standardized rows.
LloydRun lloyd(const Matrix& z, int k, int max_iter, Rng& rng) {
  const std::size_t n = z.size();
  LloydRun m;
  m.centroids.push_back(z[rng.below(n)]);
  std::vector<double> d2(n);
  while (m.centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest(m.centroids, z[i], &d2[i]);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        r -= d2[i];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
      // Guard against landing on an already-chosen point through rounding.
      if (d2[pick] == 0.0) {
        pick = static_cast<std::size_t>(std::max_element(d2.begin(), d2.end()) - d2.begin());
      }
    } else {
      pick = rng.below(n);
    }
    m.centroids.push_back(z[pick]);
  }

  std::vector<int>& assign = m.assign;
  assign.assign(n, -1);
  const std::size_t zd = z.front().size();
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest(m.centroids, z[i]);
      if (c != assign[i]) {
        assign[i] = c;
        changed = true;
      }
    }
    if (!changed && it > 0) {
      m.converged = true;
      break;
    }
    Matrix sums(static_cast<std::size_t>(k), std::vector<double>(zd, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = sums[static_cast<std::size_t>(assign[i])];
      for (std::size_t d = 0; d < zd; ++d) s[d] += z[i][d];
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    for (std::size_t c = 0; c < sums.size(); ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t d = 0; d < zd; ++d) m.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += sq_dist(m.centroids[static_cast<std::size_t>(assign[i])], z[i]);
    m.inertia_trace.push_back(inertia);
    m.iterations = it + 1;
  }
  if (m.inertia_trace.empty()) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += sq_dist(m.centroids[static_cast<std::size_t>(assign[i])], z[i]);
    m.inertia_trace.push_back(inertia);
  }
  return m;
}

}  // namespace

std::vector<double> KMeansModel::standardize(std::span<const double> x) const {
  if (x.size() != input_dim)
    throw InvalidArgument("profile dimension " + std::to_string(x.size()) + " does not match model dimension " +
                          std::to_string(input_dim));
  std::vector<double> z;
  z.reserve(retained.size());
  for (std::size_t d : retained) z.push_back((x[d] - mean[d]) / stddev[d]);
  return z;
}

KMeansModel kmeans_fit(const Matrix& profiles, const KMeansConfig& cfg) {
  const std::size_t n = profiles.size();
  if (cfg.k < 1) throw InvalidArgument("kmeans: k must be >= 1");
  if (cfg.max_iter < 1 || cfg.n_init < 1) throw InvalidArgument("kmeans: max_iter and n_init must be >= 1");
  if (n < static_cast<std::size_t>(cfg.k))
    throw InvalidArgument("kmeans: " + std::to_string(n) + " profiles is fewer than k=" + std::to_string(cfg.k));
  const std::size_t dim = profiles.front().size();
  for (const auto& row : profiles) {
    if (row.size() != dim) throw InvalidArgument("kmeans: ragged profile matrix");
  }

  // Canonical row order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return profiles[a] < profiles[b]; });

  KMeansModel m;
  m.k = cfg.k;
  m.input_dim = dim;
  m.mean.assign(dim, 0.0);
  m.stddev.assign(dim, 0.0);
  for (std::size_t i : order)
    for (std::size_t d = 0; d < dim; ++d) m.mean[d] += profiles[i][d];
  for (double& v : m.mean) v /= static_cast<double>(n);
  for (std::size_t i : order)
    for (std::size_t d = 0; d < dim; ++d) {
      const double c = profiles[i][d] - m.mean[d];
      m.stddev[d] += c * c;
    }
  for (std::size_t d = 0; d < dim; ++d) {
    m.stddev[d] = std::sqrt(m.stddev[d] / static_cast<double>(n));
    if (m.stddev[d] > 1e-12) {
      m.retained.push_back(d);
    } else {
      m.stddev[d] = 0.0;
      m.dropped.push_back(d);
      m.warnings.push_back("dropped zero-variance dimension " + std::to_string(d));
    }
  }

  Matrix z;
  z.reserve(n);
  for (std::size_t i : order) z.push_back(m.standardize(profiles[i]));

  // Independent k-means++ restarts; keep the lowest final inertia (earliest on ties).
  Rng rng(cfg.seed);
  LloydRun best;
  for (int r = 0; r < cfg.n_init; ++r) {
    LloydRun run = lloyd(z, cfg.k, cfg.max_iter, rng);
    if (r == 0 || run.inertia_trace.back() < best.inertia_trace.back()) best = std::move(run);
  }
  m.centroids = std::move(best.centroids);
  m.inertia_trace = std::move(best.inertia_trace);
  m.iterations = best.iterations;
  m.converged = best.converged;
  const std::vector<int>& assign = best.assign;

  m.assignments.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) m.assignments[order[r]] = assign[r];
  return m;
}

int kmeans_assign(const KMeansModel& model, std::span<const double> profile) {
  return nearest(model.centroids, model.standardize(profile));
}

std::vector<ClusterSummary> cluster_report(const KMeansModel& model, const Matrix& profiles) {
  std::vector<ClusterSummary> rows(static_cast<std::size_t>(model.k));
  for (int c = 0; c < model.k; ++c) {
    rows[c].cluster_id = c;
    rows[c].feature_means.assign(model.input_dim, 0.0);
  }
  for (const auto& p : profiles) {
    auto& row = rows[static_cast<std::size_t>(kmeans_assign(model, p))];
    ++row.n_users;
    for (std::size_t d = 0; d < p.size(); ++d) row.feature_means[d] += p[d];
  }
  for (auto& row : rows) {
    if (row.n_users == 0) {
      row.empty = true;
      continue;
    }
    for (double& v : row.feature_means) v /= static_cast<double>(row.n_users);
  }
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

Matrix pairwise_sq_dist(const Matrix& x) {
  const std::size_t n = x.size();
  Matrix d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d[i][j] = d[j][i] = sq_dist(x[i], x[j]);
  return d;
}

}  // namespace

ConditionalAffinities conditional_affinities(const Matrix& x, double perplexity) {
  const std::size_t n = x.size();
  if (!(perplexity > 0.0) || static_cast<double>(n) <= 3.0 * perplexity)
    throw InvalidArgument("t-SNE perplexity " + std::to_string(perplexity) + " infeasible for " + std::to_string(n) +
                          " points (need n > 3 * perplexity)");
  const Matrix d = pairwise_sq_dist(x);
  const double target_h = std::log(perplexity);  // entropy in nats
  ConditionalAffinities out;
  out.p.assign(n, std::vector<double>(n, 0.0));
  out.perplexity.assign(n, 0.0);
  std::vector<double> row(n);

  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = 0.0;
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d[i][j]);
    for (int it = 0; it < 200; ++it) {
      // Shift by the nearest distance for numerical range; cancels on normalization.
      double sum = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-(d[i][j] - dmin) * beta);
        sum += row[j];
        weighted += (d[i][j] - dmin) * row[j];
      }
      h = std::log(sum) + beta * weighted / sum;
      const double diff = h - target_h;
      if (std::abs(diff) < 1e-7) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = j == i ? 0.0 : std::exp(-(d[i][j] - dmin) * beta);
      sum += row[j];
    }
    double entropy = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out.p[i][j] = row[j] / sum;
      if (out.p[i][j] > 0.0) entropy -= out.p[i][j] * std::log(out.p[i][j]);
    }
    out.perplexity[i] = std::exp(entropy);
  }
  return out;
}

Embedding2D tsne_project(const Matrix& x, const TsneConfig& cfg) {
  const std::size_t n = x.size();
  ConditionalAffinities cond = conditional_affinities(x, cfg.perplexity);

  Matrix p(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      p[i][j] = std::max((cond.p[i][j] + cond.p[j][i]) / (2.0 * static_cast<double>(n)), 1e-12);
  for (std::size_t i = 0; i < n; ++i) p[i][i] = 0.0;

  Rng rng(cfg.seed);
  std::vector<std::array<double, 2>> y(n), update(n, {0.0, 0.0}), gains(n, {1.0, 1.0});
  for (auto& pt : y) pt = {rng.normal(0.0, 1e-2), rng.normal(0.0, 1e-2)};

  Matrix num(n, std::vector<double>(n, 0.0));
  auto compute_num = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i][j] = num[j][i] = v;
        total += 2.0 * v;
      }
    return total;
  };
  auto kl = [&] {
    const double total = compute_num();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num[i][j] / total, 1e-12);
        s += p[i][j] * std::log(p[i][j] / q);
      }
    return s;
  };

  Embedding2D out;
  std::vector<std::array<double, 2>> grad(n);
  for (int it = 0; it < cfg.iterations; ++it) {
    const double exag = it < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
    const double momentum = it < cfg.momentum_switch_iter ? 0.5 : 0.8;
    const double total = compute_num();
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num[i][j] / total, 1e-12);
        const double mult = (exag * p[i][j] - q) * num[i][j];
        gx += mult * (y[i][0] - y[j][0]);
        gy += mult * (y[i][1] - y[j][1]);
      }
      grad[i] = {4.0 * gx, 4.0 * gy};
    }
    for (std::size_t i = 0; i < n; ++i)
      for (int d = 0; d < 2; ++d) {
        const bool same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
        gains[i][d] = same_sign ? std::max(gains[i][d] * 0.8, 0.01) : gains[i][d] + 0.2;
        update[i][d] = momentum * update[i][d] - cfg.learning_rate * gains[i][d] * grad[i][d];
        y[i][d] += update[i][d];
      }
    // Re-center.
    double mx = 0.0, my = 0.0;
    for (const auto& pt : y) {
      mx += pt[0];
      my += pt[1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (auto& pt : y) {
      pt[0] -= mx;
      pt[1] -= my;
    }

    if (it + 1 == cfg.exaggeration_iters) {
      out.initial_kl = kl();
      out.kl_trace.emplace_back(it + 1, out.initial_kl);
    } else if (it + 1 > cfg.exaggeration_iters && (it + 1) % 50 == 0) {
      out.kl_trace.emplace_back(it + 1, kl());
    }
  }
  out.final_kl = kl();
  if (cfg.iterations < cfg.exaggeration_iters) out.initial_kl = out.final_kl;
  out.points = std::move(y);
  return out;
}

}  // namespace routerank
