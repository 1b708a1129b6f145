#include "routerank/dcrmodel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "routerank/evalkit.hpp"
#include "routerank/json_io.hpp"

namespace routerank {

using nd::Param;
using nd::Tensor;

void DcrConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw InvalidArgument(std::string("DcrConfig.") + name + " must be >= 1");
  };
  positive(link_embed_dim, "link_embed_dim");
  positive(seq_proj_dim, "seq_proj_dim");
  positive(lstm_hidden, "lstm_hidden");
  positive(sparse_embed_dim, "sparse_embed_dim");
  positive(batch_size, "batch_size");
  positive(max_seq_len, "max_seq_len");
  if (deep_hidden.empty()) throw InvalidArgument("DcrConfig.deep_hidden must list at least one layer");
  for (std::size_t h : deep_hidden) positive(h, "deep_hidden");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("DcrConfig.lr must be finite and >= 0");
}

std::vector<SeqStep> compact_steps(const LinkSeqFeatures& seq) {
  std::vector<SeqStep> out;
  for (std::size_t i = 0; i < seq.max_len() && seq.mask[i]; ++i) {
    out.push_back({seq.link_ids[i], seq.length[i], static_cast<std::uint8_t>(seq.lanes[i]),
                   static_cast<std::uint8_t>(seq.road_class[i]), static_cast<std::uint8_t>(seq.congestion[i])});
  }
  return out;
}

namespace {

constexpr std::size_t kDaysPerWeek = 7;
constexpr std::size_t kHoursPerDay = 24;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Keeps scores inside the open interval even when the logit saturates.
double open_unit(double s) {
  if (s >= 1.0) return std::nextafter(1.0, 0.0);
  if (s <= 0.0) return std::numeric_limits<double>::denorm_min();
  return s;
}

void fill_step_numeric(const SeqStep& s, double* out) {
  std::fill(out, out + kStepNumericDim, 0.0);
  out[0] = s.length / 1000.0;
  out[1] = s.lanes;
  out[2 + std::min<std::size_t>(s.road_class, 3)] = 1.0;
  out[6 + std::min<std::size_t>(s.congestion, 3)] = 1.0;
}

}  // namespace

std::size_t DcrModel::x0_dim() const {
  return 3 * config_.sparse_embed_dim + schema_.dense_dim + schema_.profile_dim;
}

DcrModel DcrModel::create(const DcrConfig& config, DcrSchema schema) {
  config.validate();
  if (schema.n_clusters < 1) throw InvalidArgument("DcrSchema.n_clusters must be >= 1");
  DcrModel m;
  m.config_ = config;
  m.schema_ = std::move(schema);
  m.build_vocab_index();
  const std::size_t feat = m.schema_.dense_dim + m.schema_.profile_dim;
  m.norm_mean_.assign(feat, 0.0);
  m.norm_std_.assign(feat, 1.0);

  Rng rng(derive_seed(config.seed, 0xDC7));
  const std::size_t e = config.sparse_embed_dim;
  const std::size_t d0 = m.x0_dim();

  auto embedding = [&](const char* name, std::size_t rows, std::size_t dim) {
    Param p(name, Tensor::matrix(rows, dim));
    nd::init_normal(p.value, 0.1, rng);
    return p;
  };
  auto affine = [&](const std::string& name, std::size_t in, std::size_t out, Param& w, Param& b) {
    w = Param(name + ".w", Tensor::matrix(in, out));
    nd::init_xavier_uniform(w.value, in, out, rng);
    b = Param(name + ".b", Tensor::vector(out));
  };

  m.emb_dow_ = embedding("emb.day_of_week", kDaysPerWeek, e);
  m.emb_hour_ = embedding("emb.hour_of_day", kHoursPerDay, e);
  m.emb_cluster_ = embedding("emb.cluster", m.schema_.n_clusters, e);

  m.cross_w_.resize(config.cross_layers);
  m.cross_b_.resize(config.cross_layers);
  for (std::size_t l = 0; l < config.cross_layers; ++l)
    affine("cross" + std::to_string(l), d0, d0, m.cross_w_[l], m.cross_b_[l]);

  m.deep_w_.resize(config.deep_hidden.size());
  m.deep_b_.resize(config.deep_hidden.size());
  std::size_t in = d0;
  for (std::size_t l = 0; l < config.deep_hidden.size(); ++l) {
    affine("deep" + std::to_string(l), in, config.deep_hidden[l], m.deep_w_[l], m.deep_b_[l]);
    in = config.deep_hidden[l];
  }

  std::size_t head_in = d0 + config.deep_hidden.back();
  if (config.use_sequence) {
    const std::size_t vocab = m.schema_.vocab.size();
    m.link_emb_ = embedding("emb.link", vocab + 1, config.link_embed_dim);
    for (std::size_t j = 0; j < config.link_embed_dim; ++j) m.link_emb_.value.at(vocab, j) = 0.0;
    affine("seq_proj", config.link_embed_dim + kStepNumericDim, config.seq_proj_dim, m.proj_w_, m.proj_b_);
    const std::size_t h = config.lstm_hidden;
    m.lstm_wx_ = Param("lstm.wx", Tensor::matrix(config.seq_proj_dim, 4 * h));
    nd::init_xavier_uniform(m.lstm_wx_.value, config.seq_proj_dim, 4 * h, rng);
    m.lstm_wh_ = Param("lstm.wh", Tensor::matrix(h, 4 * h));
    nd::init_xavier_uniform(m.lstm_wh_.value, h, 4 * h, rng);
    m.lstm_b_ = Param("lstm.b", Tensor::vector(4 * h));
    for (std::size_t j = 0; j < h; ++j) m.lstm_b_.value[h + j] = 1.0;  // forget gate
    head_in += h;
  }
  affine("head", head_in, 1, m.head_w_, m.head_b_);

  m.adam_.init(m.parameters());
  return m;
}

void DcrModel::build_vocab_index() {
  vocab_index_.clear();
  vocab_index_.reserve(schema_.vocab.size());
  for (std::size_t i = 0; i < schema_.vocab.size(); ++i) {
    if (!vocab_index_.emplace(schema_.vocab[i], static_cast<std::int64_t>(i)).second)
      throw InvalidArgument("duplicate link id in model vocabulary");
  }
}

std::int64_t DcrModel::link_row(LinkId id) const {
  auto it = vocab_index_.find(id);
  if (it == vocab_index_.end()) throw InvalidArgument("unknown link id " + std::to_string(id) + " for DCR model");
  return it->second;
}

void DcrModel::set_normalization(std::vector<double> mean, std::vector<double> stddev) {
  const std::size_t feat = schema_.dense_dim + schema_.profile_dim;
  if (mean.size() != feat || stddev.size() != feat) throw InvalidArgument("normalization size mismatch");
  norm_mean_ = std::move(mean);
  norm_std_ = std::move(stddev);
}

void DcrModel::fit_normalization(std::span<const DcrSample> samples) {
  const std::size_t dd = schema_.dense_dim, feat = dd + schema_.profile_dim;
  std::vector<double> mean(feat, 0.0), sd(feat, 0.0);
  if (samples.empty()) throw InvalidArgument("fit_normalization: no samples");
  auto value = [&](const DcrSample& s, std::size_t j) { return j < dd ? s.dense[j] : s.profile[j - dd]; };
  for (const auto& s : samples)
    for (std::size_t j = 0; j < feat; ++j) mean[j] += value(s, j);
  for (double& v : mean) v /= static_cast<double>(samples.size());
  for (const auto& s : samples)
    for (std::size_t j = 0; j < feat; ++j) {
      const double c = value(s, j) - mean[j];
      sd[j] += c * c;
    }
  for (double& v : sd) {
    v = std::sqrt(v / static_cast<double>(samples.size()));
    if (!(v > 1e-12)) v = 1.0;
  }
  set_normalization(std::move(mean), std::move(sd));
}

std::vector<Param*> DcrModel::parameters() {
  std::vector<Param*> out{&emb_dow_, &emb_hour_, &emb_cluster_};
  for (std::size_t l = 0; l < cross_w_.size(); ++l) {
    out.push_back(&cross_w_[l]);
    out.push_back(&cross_b_[l]);
  }
  for (std::size_t l = 0; l < deep_w_.size(); ++l) {
    out.push_back(&deep_w_[l]);
    out.push_back(&deep_b_[l]);
  }
  if (config_.use_sequence) {
    for (Param* p : {&link_emb_, &proj_w_, &proj_b_, &lstm_wx_, &lstm_wh_, &lstm_b_}) out.push_back(p);
  }
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

std::vector<const Param*> DcrModel::parameters() const {
  auto ps = const_cast<DcrModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void DcrModel::zero_grad() {
  for (Param* p : parameters()) p->grad.zero();
}

std::vector<double> DcrModel::forward(std::span<const DcrSample* const> batch, DcrBatchCache& c) const {
  const std::size_t n = batch.size();
  const std::size_t e = config_.sparse_embed_dim, dd = schema_.dense_dim, dp = schema_.profile_dim;
  const std::size_t d0 = x0_dim();
  c = DcrBatchCache{};
  c.n = n;

  // x0
  c.x0 = Tensor::matrix(n, d0);
  c.dow.resize(n);
  c.hour.resize(n);
  c.cluster.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const DcrSample& s = *batch[r];
    if (s.dense.size() != dd || s.profile.size() != dp)
      throw InvalidArgument("DCR sample has dense/profile dims " + std::to_string(s.dense.size()) + "/" +
                            std::to_string(s.profile.size()) + ", model expects " + std::to_string(dd) + "/" +
                            std::to_string(dp));
    if (s.day_of_week < 0 || s.day_of_week >= static_cast<int>(kDaysPerWeek) || s.hour_of_day < 0 ||
        s.hour_of_day >= static_cast<int>(kHoursPerDay) || s.cluster_id < 0 ||
        s.cluster_id >= static_cast<int>(schema_.n_clusters))
      throw InvalidArgument("DCR sample sparse id out of range");
    c.dow[r] = s.day_of_week;
    c.hour[r] = s.hour_of_day;
    c.cluster[r] = s.cluster_id;
    double* row = c.x0.data() + r * d0;
    std::copy_n(emb_dow_.value.data() + c.dow[r] * e, e, row);
    std::copy_n(emb_hour_.value.data() + c.hour[r] * e, e, row + e);
    std::copy_n(emb_cluster_.value.data() + c.cluster[r] * e, e, row + 2 * e);
    double* dense = row + 3 * e;
    for (std::size_t j = 0; j < dd; ++j) dense[j] = (s.dense[j] - norm_mean_[j]) / norm_std_[j];
    for (std::size_t j = 0; j < dp; ++j) dense[dd + j] = (s.profile[j] - norm_mean_[dd + j]) / norm_std_[dd + j];
  }

  // Cross branch.
  Tensor xl = c.x0;
  c.cross_in.reserve(cross_w_.size());
  c.cross_cache.resize(cross_w_.size());
  for (std::size_t l = 0; l < cross_w_.size(); ++l) {
    c.cross_in.push_back(xl);
    xl = nd::cross_forward(c.x0, xl, cross_w_[l].value, cross_b_[l].value, &c.cross_cache[l]);
  }

  // Deep branch.
  Tensor h = c.x0;
  for (std::size_t l = 0; l < deep_w_.size(); ++l) {
    c.deep_in.push_back(h);
    c.deep_pre.push_back(nd::linear_forward(h, deep_w_[l].value, deep_b_[l].value));
    h = nd::relu_forward(c.deep_pre.back());
  }

  // Sequence branch.
  std::size_t head_dim = d0 + h.cols();
  if (config_.use_sequence) {
    const std::size_t le = config_.link_embed_dim, step_dim = le + kStepNumericDim;
    const auto pad = static_cast<std::int64_t>(schema_.vocab.size());
    std::size_t steps = 0;
    for (const DcrSample* s : batch) steps = std::max(steps, std::min(s->steps.size(), config_.max_seq_len));
    c.steps = steps;
    c.step_rows.assign(steps, std::vector<std::int64_t>(n, pad));
    c.mask.assign(steps, std::vector<std::uint8_t>(n, 0));
    std::vector<Tensor> lstm_in;
    lstm_in.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      Tensor in = Tensor::matrix(n, step_dim);
      for (std::size_t r = 0; r < n; ++r) {
        const DcrSample& s = *batch[r];
        if (t >= s.steps.size()) continue;
        const std::int64_t row = link_row(s.steps[t].link_id);
        c.step_rows[t][r] = row;
        c.mask[t][r] = 1;
        std::copy_n(link_emb_.value.data() + row * le, le, in.data() + r * step_dim);
        fill_step_numeric(s.steps[t], in.data() + r * step_dim + le);
      }
      c.step_pre.push_back(nd::linear_forward(in, proj_w_.value, proj_b_.value));
      lstm_in.push_back(nd::relu_forward(c.step_pre.back()));
      c.step_in.push_back(std::move(in));
    }
    const nd::LstmWeights w{lstm_wx_.value, lstm_wh_.value, lstm_b_.value};
    if (steps == 0) {
      c.lstm.h = Tensor::matrix(n, config_.lstm_hidden);
      c.lstm.c = Tensor::matrix(n, config_.lstm_hidden);
    } else {
      c.lstm = nd::lstm_sequence_forward(lstm_in, c.mask, w);
    }
    head_dim += config_.lstm_hidden;
  }

  // Head.
  c.head_in = Tensor::matrix(n, head_dim);
  for (std::size_t r = 0; r < n; ++r) {
    double* row = c.head_in.data() + r * head_dim;
    std::copy_n(xl.data() + r * d0, d0, row);
    std::copy_n(h.data() + r * h.cols(), h.cols(), row + d0);
    if (config_.use_sequence)
      std::copy_n(c.lstm.h.data() + r * config_.lstm_hidden, config_.lstm_hidden, row + d0 + h.cols());
  }
  Tensor logits = nd::linear_forward(c.head_in, head_w_.value, head_b_.value);
  return {logits.values().begin(), logits.values().end()};
}

void DcrModel::backward(const DcrBatchCache& c, std::span<const double> dlogit) {
  const std::size_t n = c.n;
  if (dlogit.size() != n) throw InvalidArgument("backward: gradient count does not match batch");
  const std::size_t e = config_.sparse_embed_dim, d0 = x0_dim();
  const std::size_t deep_out = config_.deep_hidden.back();
  const std::size_t head_dim = c.head_in.cols();

  Tensor dlog({n, 1}, std::vector<double>(dlogit.begin(), dlogit.end()));
  Tensor dhead;
  nd::linear_backward(c.head_in, head_w_.value, dlog, &dhead, head_w_.grad, head_b_.grad);

  Tensor dxl = Tensor::matrix(n, d0), dh = Tensor::matrix(n, deep_out), dseq;
  if (config_.use_sequence) dseq = Tensor::matrix(n, config_.lstm_hidden);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = dhead.data() + r * head_dim;
    std::copy_n(row, d0, dxl.data() + r * d0);
    std::copy_n(row + d0, deep_out, dh.data() + r * deep_out);
    if (config_.use_sequence) std::copy_n(row + d0 + deep_out, config_.lstm_hidden, dseq.data() + r * config_.lstm_hidden);
  }

  // Deep branch.
  for (std::size_t l = deep_w_.size(); l-- > 0;) {
    Tensor dpre = nd::relu_backward(c.deep_pre[l], dh);
    Tensor dx;
    nd::linear_backward(c.deep_in[l], deep_w_[l].value, dpre, &dx, deep_w_[l].grad, deep_b_[l].grad);
    dh = std::move(dx);
  }
  Tensor dx0 = std::move(dh);

  // Cross branch.
  for (std::size_t l = cross_w_.size(); l-- > 0;) {
    Tensor dx0_l, dxl_prev;
    nd::cross_backward(c.x0, c.cross_in[l], cross_w_[l].value, c.cross_cache[l], dxl, dx0_l, dxl_prev,
                       cross_w_[l].grad, cross_b_[l].grad);
    for (std::size_t i = 0; i < dx0.size(); ++i) dx0[i] += dx0_l[i];
    dxl = std::move(dxl_prev);
  }
  for (std::size_t i = 0; i < dx0.size(); ++i) dx0[i] += dxl[i];

  // Sparse embeddings.
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = dx0.data() + r * d0;
    double* gd = emb_dow_.grad.data() + c.dow[r] * e;
    double* gh = emb_hour_.grad.data() + c.hour[r] * e;
    double* gc = emb_cluster_.grad.data() + c.cluster[r] * e;
    for (std::size_t j = 0; j < e; ++j) {
      gd[j] += row[j];
      gh[j] += row[e + j];
      gc[j] += row[2 * e + j];
    }
  }

  // Sequence branch.
  if (config_.use_sequence && c.steps > 0) {
    const nd::LstmWeights w{lstm_wx_.value, lstm_wh_.value, lstm_b_.value};
    std::vector<Tensor> dxs = nd::lstm_sequence_backward(c.lstm, w, dseq, lstm_wx_.grad, lstm_wh_.grad, lstm_b_.grad);
    const std::size_t le = config_.link_embed_dim, step_dim = le + kStepNumericDim;
    for (std::size_t t = 0; t < c.steps; ++t) {
      Tensor dpre = nd::relu_backward(c.step_pre[t], dxs[t]);
      Tensor din;
      nd::linear_backward(c.step_in[t], proj_w_.value, dpre, &din, proj_w_.grad, proj_b_.grad);
      for (std::size_t r = 0; r < n; ++r) {
        if (!c.mask[t][r]) continue;
        double* g = link_emb_.grad.data() + c.step_rows[t][r] * le;
        const double* src = din.data() + r * step_dim;
        for (std::size_t j = 0; j < le; ++j) g[j] += src[j];
      }
    }
  }
}

std::vector<double> DcrModel::score(std::span<const DcrSample> samples, std::size_t batch_size) const {
  std::vector<double> out;
  out.reserve(samples.size());
  std::vector<const DcrSample*> ptrs;
  DcrBatchCache cache;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    ptrs.clear();
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&samples[i]);
    for (double z : forward(ptrs, cache)) out.push_back(open_unit(stable_sigmoid(z)));
  }
  return out;
}

bool operator==(const DcrModel& a, const DcrModel& b) {
  if (!(a.config_ == b.config_) || !(a.schema_ == b.schema_) || a.norm_mean_ != b.norm_mean_ ||
      a.norm_std_ != b.norm_std_)
    return false;
  auto pa = a.parameters();
  auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->name != pb[i]->name || !(pa[i]->value == pb[i]->value)) return false;
  }
  return a.adam_.t == b.adam_.t && a.adam_.m == b.adam_.m && a.adam_.v == b.adam_.v;
}

// ---------------------------------------------------------------------------
// Checkpoint layout (little-endian):
//   8 bytes   magic "RRDCRCK1"
//   u64       header length L
//   L bytes   JSON header: config, schema dims, tensor table, optimizer scalars
//   payload   float64 arrays in tensor-table order, then the int64 vocabulary

namespace {

constexpr char kMagic[8] = {'R', 'R', 'D', 'C', 'R', 'C', 'K', '1'};

template <typename T>
void write_raw(std::ostream& os, const T* data, std::size_t count) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
void read_raw(std::istream& is, T* data, std::size_t count) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (!is) throw SchemaError("checkpoint truncated");
}

}  // namespace

void DcrModel::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = "routerank-dcr-checkpoint";
  header["version"] = 1;
  header["config"] = config_;
  header["schema"] = {{"dense_dim", schema_.dense_dim},
                      {"profile_dim", schema_.profile_dim},
                      {"n_clusters", schema_.n_clusters},
                      {"vocab_size", schema_.vocab.size()}};
  header["adam"] = {{"t", adam_.t}, {"beta1", adam_.beta1}, {"beta2", adam_.beta2}, {"eps", adam_.eps}};
  nlohmann::json table = nlohmann::json::array();
  table.push_back({{"name", "norm.mean"}, {"shape", {norm_mean_.size()}}});
  table.push_back({{"name", "norm.std"}, {"shape", {norm_std_.size()}}});
  const auto params = parameters();
  for (const Param* p : params) table.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  for (const Param* p : params) table.push_back({{"name", "adam.m." + p->name}, {"shape", p->value.shape()}});
  for (const Param* p : params) table.push_back({{"name", "adam.v." + p->name}, {"shape", p->value.shape()}});
  header["tensors"] = table;
  const std::string hdr = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  const std::uint64_t len = hdr.size();
  write_raw(os, &len, 1);
  os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  write_raw(os, norm_mean_.data(), norm_mean_.size());
  write_raw(os, norm_std_.data(), norm_std_.size());
  for (const Param* p : params) write_raw(os, p->value.data(), p->value.size());
  for (const Tensor& m : adam_.m) write_raw(os, m.data(), m.size());
  for (const Tensor& v : adam_.v) write_raw(os, v.data(), v.size());
  write_raw(os, schema_.vocab.data(), schema_.vocab.size());
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

DcrModel DcrModel::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingInput("checkpoint not found: " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw SchemaError("not a DCR checkpoint: " + path.string());
  std::uint64_t len = 0;
  read_raw(is, &len, 1);
  if (len > (1ULL << 30)) throw SchemaError("checkpoint header too large");
  std::string hdr(len, '\0');
  is.read(hdr.data(), static_cast<std::streamsize>(len));
  if (!is) throw SchemaError("checkpoint truncated");

  nlohmann::json header;
  DcrConfig cfg;
  DcrSchema schema;
  std::size_t vocab_size = 0;
  try {
    header = nlohmann::json::parse(hdr);
    cfg = header.at("config").get<DcrConfig>();
    const auto& s = header.at("schema");
    schema.dense_dim = s.at("dense_dim").get<std::size_t>();
    schema.profile_dim = s.at("profile_dim").get<std::size_t>();
    schema.n_clusters = s.at("n_clusters").get<std::size_t>();
    vocab_size = s.at("vocab_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError(std::string("bad checkpoint header: ") + ex.what());
  }
  // Placeholder ids; the stored vocabulary is read after the tensors.
  schema.vocab.resize(vocab_size);
  std::iota(schema.vocab.begin(), schema.vocab.end(), LinkId{0});

  DcrModel m = create(cfg, schema);
  const auto params = m.parameters();
  try {
    const auto& table = header.at("tensors");
    if (table.size() != 2 + 3 * params.size()) throw SchemaError("checkpoint tensor table does not match architecture");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (table[2 + i].at("name").get<std::string>() != params[i]->name ||
          table[2 + i].at("shape").get<std::vector<std::size_t>>() != params[i]->value.shape())
        throw SchemaError("checkpoint tensor mismatch at " + params[i]->name);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError(std::string("bad checkpoint tensor table: ") + ex.what());
  }
  read_raw(is, m.norm_mean_.data(), m.norm_mean_.size());
  read_raw(is, m.norm_std_.data(), m.norm_std_.size());
  for (Param* p : params) read_raw(is, p->value.data(), p->value.size());
  for (Tensor& t : m.adam_.m) read_raw(is, t.data(), t.size());
  for (Tensor& t : m.adam_.v) read_raw(is, t.data(), t.size());
  read_raw(is, m.schema_.vocab.data(), vocab_size);
  const auto& adam = header.at("adam");
  m.adam_.t = adam.at("t").get<std::int64_t>();
  m.adam_.beta1 = adam.at("beta1").get<double>();
  m.adam_.beta2 = adam.at("beta2").get<double>();
  m.adam_.eps = adam.at("eps").get<double>();
  m.build_vocab_index();
  return m;
}

// ---------------------------------------------------------------------------

DcrModel dcr_train(std::span<const DcrSample> train, std::span<const DcrSample> val, const DcrConfig& config,
                   const DcrSchema& schema, TrainReport* report) {
  if (train.empty()) throw InvalidArgument("dcr_train: empty training set");
  if (val.empty()) throw InvalidArgument("dcr_train: empty validation set");
  for (const auto& s : train) {
    if (s.y != 0.0 && s.y != 1.0) throw InvalidArgument("dcr_train: labels must be binary");
  }
  const auto t0 = std::chrono::steady_clock::now();

  DcrModel model = DcrModel::create(config, schema);
  model.fit_normalization(train);
  const auto params = model.parameters();

  TrainReport rep;
  rep.seed = config.seed;
  rep.config = config;

  std::vector<double> val_y;
  val_y.reserve(val.size());
  for (const auto& s : val) val_y.push_back(s.y);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  DcrModel best = model;
  double best_key = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  std::vector<const DcrSample*> batch;
  std::vector<double> yhat, ys, dlogit;
  DcrBatchCache cache;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 0x5EED, epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      ys.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&train[order[i]]);
        ys.push_back(train[order[i]].y);
      }
      const std::vector<double> logits = model.forward(batch, cache);
      yhat.resize(logits.size());
      for (std::size_t i = 0; i < logits.size(); ++i) yhat[i] = stable_sigmoid(logits[i]);
      const double loss = nd::bce_loss(yhat, ys);
      if (!std::isfinite(loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      // d/dz of mean BCE(sigmoid(z), y)
      dlogit.resize(logits.size());
      const double inv_n = 1.0 / static_cast<double>(logits.size());
      for (std::size_t i = 0; i < logits.size(); ++i) dlogit[i] = (yhat[i] - ys[i]) * inv_n;
      model.zero_grad();
      model.backward(cache, dlogit);
      try {
        nd::adam_step(params, model.optimizer(), config.lr);
      } catch (const NumericError& ex) {
        throw NumericError(std::string(ex.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      }
      loss_sum += loss * static_cast<double>(end - start);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    const std::vector<double> vs = model.score(val);
    rec.val_loss = nd::bce_loss(vs, val_y);
    const auto a = auc(vs, val_y);
    rec.val_auc = a ? *a : std::numeric_limits<double>::quiet_NaN();
    rep.epochs.push_back(rec);

    const double key = a ? *a : -rec.val_loss;
    if (key > best_key) {
      best_key = key;
      best = model;
      rep.best_epoch = epoch;
      since_best = 0;
    } else if (config.early_stop_patience > 0 && ++since_best >= config.early_stop_patience) {
      rep.early_stopped = true;
      break;
    }
  }
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (report) *report = std::move(rep);
  if (config.epochs == 0) return model;
  return best;
}

std::vector<RankedCandidate> rank_by_score(std::span<const double> scores, std::span<const double> etas) {
  if (scores.size() != etas.size()) throw InvalidArgument("rank_by_score: scores/etas size mismatch");
  std::vector<RankedCandidate> out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({i, scores[i]});
  std::sort(out.begin(), out.end(), [&](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (etas[a.index] != etas[b.index]) return etas[a.index] < etas[b.index];
    return a.index < b.index;
  });
  return out;
}

std::vector<RankedCandidate> dcr_rank(const DcrModel& model, std::span<const DcrSample> candidates,
                                      std::span<const double> etas) {
  if (candidates.empty()) throw InvalidArgument("dcr_rank: no candidates");
  return rank_by_score(model.score(candidates), etas);
}

}  // namespace routerank
