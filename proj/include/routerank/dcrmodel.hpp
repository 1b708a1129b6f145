#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "routerank/featset.hpp"
#include "routerank/ndiff.hpp"

namespace routerank {

struct DcrConfig {
  std::size_t link_embed_dim = 32;
  std::size_t seq_proj_dim = 128;
  std::size_t lstm_hidden = 256;
  std::size_t cross_layers = 2;
  std::vector<std::size_t> deep_hidden{128, 64};
  std::size_t sparse_embed_dim = 8;
  double lr = 1e-4;
  std::size_t batch_size = 256;
  std::size_t epochs = 20;
  std::size_t max_seq_len = 64;
  std::uint64_t seed = 0;
  /// Stop when validation AUC has not improved for this many epochs (0 = never).
  std::size_t early_stop_patience = 5;
  /// false = no-sequence ablation (cross + deep branches only).
  bool use_sequence = true;

  void validate() const;
  friend bool operator==(const DcrConfig&, const DcrConfig&) = default;
};

/// One link of a candidate's sequence, in compact form.
struct SeqStep {
  LinkId link_id = 0;
  double length = 0.0;  // m
  std::uint8_t lanes = 1;
  std::uint8_t road_class = 0;
  std::uint8_t congestion = 0;
};

std::vector<SeqStep> compact_steps(const LinkSeqFeatures& seq);

/// Model input for one (request, candidate) pair.
struct DcrSample {
  std::vector<double> dense;    // route dense features (+ request-relative columns)
  std::vector<double> profile;  // user profile values
  int day_of_week = 0;
  int hour_of_day = 0;
  int cluster_id = 0;
  std::vector<SeqStep> steps;  // at most max_seq_len
  double y = 0.0;
};

/// Shape information fixed at construction.
struct DcrSchema {
  std::size_t dense_dim = 0;
  std::size_t profile_dim = 0;
  std::size_t n_clusters = 6;
  std::vector<LinkId> vocab;  // link ids with an embedding row; padding row follows
  friend bool operator==(const DcrSchema&, const DcrSchema&) = default;
};

struct DcrBatchCache;

/// Deep-Cross-Recurrent scorer.
///
/// x0 = [emb(day_of_week), emb(hour), emb(cluster), z-scored dense ++ profile]
/// cross branch: x_{l+1} = x0 * (x_l W_l + b_l) + x_l
/// deep branch:  relu MLP over x0
/// sequence branch: [emb(link), step numerics] -> affine + relu -> masked LSTM
/// head: sigmoid(affine([cross, deep, last hidden state]))
class DcrModel {
 public:
  DcrModel() = default;

  /// Fresh parameters drawn from `config.seed`.
  static DcrModel create(const DcrConfig& config, DcrSchema schema);

  const DcrConfig& config() const { return config_; }
  const DcrSchema& schema() const { return schema_; }
  std::size_t x0_dim() const;

  /// Per-dimension z-score statistics over [dense ++ profile].
  void set_normalization(std::vector<double> mean, std::vector<double> stddev);
  void fit_normalization(std::span<const DcrSample> samples);
  std::span<const double> norm_mean() const { return norm_mean_; }
  std::span<const double> norm_std() const { return norm_std_; }

  std::vector<nd::Param*> parameters();
  std::vector<const nd::Param*> parameters() const;

  /// Scores in (0, 1), one per sample; each score depends only on its own sample.
  std::vector<double> score(std::span<const DcrSample> samples, std::size_t batch_size = 512) const;

  /// Forward pass keeping activations for backward(). Returns logits.
  std::vector<double> forward(std::span<const DcrSample* const> batch, DcrBatchCache& cache) const;
  /// Accumulates parameter gradients given dL/dlogit per sample.
  void backward(const DcrBatchCache& cache, std::span<const double> dlogit);
  void zero_grad();

  nd::AdamState& optimizer() { return adam_; }
  const nd::AdamState& optimizer() const { return adam_; }

  /// Bit-exact binary checkpoint (parameters, normalization, optimizer state).
  void save(const std::filesystem::path& path) const;
  static DcrModel load(const std::filesystem::path& path);

  friend bool operator==(const DcrModel& a, const DcrModel& b);

 private:
  void build_vocab_index();
  std::int64_t link_row(LinkId id) const;

  DcrConfig config_;
  DcrSchema schema_;
  std::unordered_map<LinkId, std::int64_t> vocab_index_;
  std::vector<double> norm_mean_;
  std::vector<double> norm_std_;

  nd::Param emb_dow_, emb_hour_, emb_cluster_;
  std::vector<nd::Param> cross_w_, cross_b_;
  std::vector<nd::Param> deep_w_, deep_b_;
  nd::Param link_emb_;
  nd::Param proj_w_, proj_b_;
  nd::Param lstm_wx_, lstm_wh_, lstm_b_;
  nd::Param head_w_, head_b_;
  nd::AdamState adam_;

  friend struct DcrBatchCache;
};

struct DcrBatchCache {
  std::size_t n = 0;
  std::vector<std::int64_t> dow, hour, cluster;
  nd::Tensor x0;
  std::vector<nd::Tensor> cross_in;  // x_l for each layer
  std::vector<nd::CrossCache> cross_cache;
  std::vector<nd::Tensor> deep_in, deep_pre;
  std::size_t steps = 0;
  std::vector<std::vector<std::int64_t>> step_rows;  // [T][n]
  std::vector<nd::Tensor> step_in, step_pre;         // [T] x [n, ...]
  std::vector<std::vector<std::uint8_t>> mask;       // [T][n]
  nd::LstmSequence lstm;
  nd::Tensor head_in;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;  // NaN when validation is single-class
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
  double wall_time_s = 0.0;  // not part of the serialized report
  std::uint64_t seed = 0;
  DcrConfig config;
};

/// Pointwise training with BCE and Adam; returns the parameters of the
/// epoch with the best validation AUC.
DcrModel dcr_train(std::span<const DcrSample> train, std::span<const DcrSample> val, const DcrConfig& config,
                   const DcrSchema& schema, TrainReport* report = nullptr);

struct RankedCandidate {
  std::size_t index = 0;
  double score = 0.0;
};

/// Descending score; ties by ascending ETA then ascending index.
std::vector<RankedCandidate> rank_by_score(std::span<const double> scores, std::span<const double> etas);

std::vector<RankedCandidate> dcr_rank(const DcrModel& model, std::span<const DcrSample> candidates,
                                      std::span<const double> etas);

}  // namespace routerank
