#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace routerank {

using Matrix = std::vector<std::vector<double>>;

struct KMeansConfig {
  int k = 6;
  int max_iter = 300;
  /// k-means++ restarts; the run with the lowest final inertia is kept.
  int n_init = 10;
  std::uint64_t seed = 0;
};

/// Fitted K-Means over z-scored features.
///
/// Dimensions with zero variance in the training data are dropped; their
/// indices are listed in `dropped` and a warning is recorded.
struct KMeansModel {
  int k = 0;
  std::size_t input_dim = 0;
  std::vector<double> mean;             // per input dimension
  std::vector<double> stddev;           // per input dimension (0 for dropped)
  std::vector<std::size_t> retained;    // input dimensions used for distances
  std::vector<std::size_t> dropped;
  Matrix centroids;                     // k x retained.size(), standardized space
  std::vector<int> assignments;         // training rows, original order
  std::vector<double> inertia_trace;    // after each Lloyd iteration
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;

  double inertia() const { return inertia_trace.empty() ? 0.0 : inertia_trace.back(); }
  std::vector<double> standardize(std::span<const double> x) const;
};

/// Lloyd's algorithm with k-means++ seeding, best of `n_init` restarts.
///
/// Rows are processed in a canonical (lexicographically sorted) order, so
/// permuting the input permutes the assignments and leaves the partition
/// unchanged.
KMeansModel kmeans_fit(const Matrix& profiles, const KMeansConfig& cfg = {});

/// Nearest centroid in standardized space; ties go to the lowest index.
int kmeans_assign(const KMeansModel& model, std::span<const double> profile);

struct ClusterSummary {
  int cluster_id = 0;
  std::size_t n_users = 0;
  bool empty = false;
  std::vector<double> feature_means;  // raw feature space
};

/// Per-cluster mean of the raw features of the assigned profiles.
std::vector<ClusterSummary> cluster_report(const KMeansModel& model, const Matrix& profiles);

// ---------------------------------------------------------------------------

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iters = 250;
  int momentum_switch_iter = 250;
};

struct Embedding2D {
  std::vector<std::array<double, 2>> points;
  /// KL divergence right after early exaggeration ends.
  double initial_kl = 0.0;
  double final_kl = 0.0;
  /// (iteration, KL) every 50 iterations past the exaggeration phase.
  std::vector<std::pair<int, double>> kl_trace;
};

/// Row-conditional affinities p_{j|i} with a per-point Gaussian bandwidth
/// found by bisection so that 2^H(P_i) matches the perplexity.
struct ConditionalAffinities {
  Matrix p;                            // rows sum to 1, zero diagonal
  std::vector<double> perplexity;      // achieved per row
};

ConditionalAffinities conditional_affinities(const Matrix& x, double perplexity);

/// Exact t-SNE projection to two dimensions.
Embedding2D tsne_project(const Matrix& x, const TsneConfig& cfg = {});

}  // namespace routerank
