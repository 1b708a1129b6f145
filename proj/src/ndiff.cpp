#include "routerank/ndiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace routerank::nd {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (std::size_t d : shape_) n *= d;
  data_.assign(n, fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (std::size_t d : shape_) n *= d;
  if (values.size() != n)
    throw InvalidArgument("tensor of shape " + shape_str(shape_) + " needs " + std::to_string(n) + " values, got " +
                          std::to_string(values.size()));
  data_ = std::move(values);
}

Tensor Tensor::of(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw InvalidArgument("Tensor::of: ragged rows");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void init_xavier_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : w.values()) v = rng.uniform(-a, a);
}

void init_normal(Tensor& w, double stddev, Rng& rng) {
  for (double& v : w.values()) v = rng.normal(0.0, stddev);
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

void require_2d(const Tensor& t, const char* name) {
  require(t.shape().size() == 2, std::string(name) + " must be 2-D, got " + shape_str(t.shape()));
}

// c[n, m] (+)= a[n, k] * b[k, m]
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = pc + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[k, m] += a[n, k]^T * b[n, m]
void gemm_at_b_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* brow = pb + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      double* crow = pc + kk * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n, k] = a[n, m] * b[k, m]^T
void gemm_a_bt(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), m = a.cols(), k = b.rows();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* brow = pb + kk * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += arow[j] * brow[j];
      pc[i * k + kk] = s;
    }
  }
}

void add_bias(Tensor& y, const Tensor& b) {
  const std::size_t n = y.rows(), m = y.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y.at(i, j) = b[j];
}

void bias_grad_acc(const Tensor& dy, Tensor& db) {
  const std::size_t n = dy.rows(), m = dy.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) db[j] += dy.at(i, j);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_2d(x, "linear x");
  require_2d(w, "linear W");
  require(x.cols() == w.rows(), "linear: x " + shape_str(x.shape()) + " incompatible with W " + shape_str(w.shape()));
  require(b.size() == w.cols(), "linear: bias size " + std::to_string(b.size()) + " != " + std::to_string(w.cols()));
  Tensor y = Tensor::matrix(x.rows(), w.cols());
  add_bias(y, b);
  gemm_acc(x, w, y);
  return y;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor& dw, Tensor& db) {
  require(dy.rows() == x.rows() && dy.cols() == w.cols(), "linear_backward: dy shape mismatch");
  gemm_at_b_acc(x, dy, dw);
  bias_grad_acc(dy, db);
  if (dx) {
    if (!dx->same_shape(x)) *dx = Tensor(x.shape());
    gemm_a_bt(dy, w, *dx);
  }
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require(x.same_shape(dy), "relu_backward: shape mismatch");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  return dx;
}

Tensor sigmoid_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = sigmoid(v);
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  require(y.same_shape(dy), "sigmoid_backward: shape mismatch");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
  return dx;
}

Tensor tanh_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = std::tanh(v);
  return y;
}

Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
  require(y.same_shape(dy), "tanh_backward: shape mismatch");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - y[i] * y[i];
  return dx;
}

Tensor embedding_forward(std::span<const std::int64_t> ids, const Tensor& table,
                         std::optional<std::int64_t> padding_id) {
  require_2d(table, "embedding table");
  const std::size_t d = table.cols();
  const auto vocab = static_cast<std::int64_t>(table.rows());
  Tensor out = Tensor::matrix(ids.size(), d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const std::int64_t id = ids[r];
    if (padding_id && id == *padding_id) continue;
    if (id < 0 || id >= vocab)
      throw InvalidArgument("embedding id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
    std::copy_n(table.data() + static_cast<std::size_t>(id) * d, d, out.data() + r * d);
  }
  return out;
}

void embedding_backward(std::span<const std::int64_t> ids, const Tensor& dy, Tensor& dtable,
                        std::optional<std::int64_t> padding_id) {
  const std::size_t d = dtable.cols();
  require(dy.rows() == ids.size() && dy.cols() == d, "embedding_backward: dy shape mismatch");
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const std::int64_t id = ids[r];
    if (padding_id && id == *padding_id) continue;
    if (id < 0 || id >= static_cast<std::int64_t>(dtable.rows()))
      throw InvalidArgument("embedding id " + std::to_string(id) + " out of range");
    double* row = dtable.data() + static_cast<std::size_t>(id) * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += dy.at(r, j);
  }
}

Tensor cross_forward(const Tensor& x0, const Tensor& xl, const Tensor& w, const Tensor& b, CrossCache* cache) {
  require(x0.same_shape(xl), "cross: x0 " + shape_str(x0.shape()) + " and xl " + shape_str(xl.shape()) + " differ");
  require(w.rows() == xl.cols() && w.cols() == xl.cols(), "cross: W must be [d, d]");
  Tensor affine = linear_forward(xl, w, b);
  Tensor y = xl;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x0[i] * affine[i];
  if (cache) cache->affine = std::move(affine);
  return y;
}

void cross_backward(const Tensor& x0, const Tensor& xl, const Tensor& w, const CrossCache& cache, const Tensor& dy,
                    Tensor& dx0, Tensor& dxl, Tensor& dw, Tensor& db) {
  require(dy.same_shape(x0), "cross_backward: dy shape mismatch");
  dx0 = Tensor(x0.shape());
  Tensor daffine(x0.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dx0[i] = dy[i] * cache.affine[i];
    daffine[i] = dy[i] * x0[i];
  }
  Tensor dxl_aff;
  linear_backward(xl, w, daffine, &dxl_aff, dw, db);
  dxl = dy;
  for (std::size_t i = 0; i < dxl.size(); ++i) dxl[i] += dxl_aff[i];
}

// ---------------------------------------------------------------------------

LstmStepCache lstm_cell_forward(const Tensor& x, const Tensor& h, const Tensor& c, const LstmWeights& p,
                                std::span<const std::uint8_t> mask) {
  const std::size_t n = x.rows(), hd = p.hidden();
  require(x.cols() == p.input_dim(), "lstm: input dim " + std::to_string(x.cols()) + " != " +
                                         std::to_string(p.input_dim()));
  require(h.rows() == n && h.cols() == hd && c.same_shape(h), "lstm: state shape mismatch");
  require(p.wx.cols() == 4 * hd && p.wh.cols() == 4 * hd && p.b.size() == 4 * hd, "lstm: parameter shape mismatch");
  require(mask.empty() || mask.size() == n, "lstm: mask length mismatch");

  Tensor z = Tensor::matrix(n, 4 * hd);
  add_bias(z, p.b);
  gemm_acc(x, p.wx, z);
  gemm_acc(h, p.wh, z);

  LstmStepCache cache;
  cache.x = x;
  cache.h_prev = h;
  cache.c_prev = c;
  cache.mask.assign(mask.begin(), mask.end());
  cache.i = cache.f = cache.g = cache.o = Tensor::matrix(n, hd);
  cache.c = c;
  cache.h = h;
  cache.tanh_c = Tensor::matrix(n, hd);
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask.empty() && !mask[r]) continue;  // state carried through unchanged
    const double* zr = z.data() + r * 4 * hd;
    for (std::size_t j = 0; j < hd; ++j) {
      const double ig = sigmoid(zr[j]);
      const double fg = sigmoid(zr[hd + j]);
      const double gg = std::tanh(zr[2 * hd + j]);
      const double og = sigmoid(zr[3 * hd + j]);
      const double cn = fg * c.at(r, j) + ig * gg;
      const double tc = std::tanh(cn);
      cache.i.at(r, j) = ig;
      cache.f.at(r, j) = fg;
      cache.g.at(r, j) = gg;
      cache.o.at(r, j) = og;
      cache.c.at(r, j) = cn;
      cache.tanh_c.at(r, j) = tc;
      cache.h.at(r, j) = og * tc;
    }
  }
  return cache;
}

LstmStepGrads lstm_cell_backward(const LstmStepCache& cache, const LstmWeights& p, const Tensor& dh, const Tensor& dc,
                                 Tensor& dwx, Tensor& dwh, Tensor& db) {
  const std::size_t n = cache.x.rows(), hd = p.hidden();
  require(dh.rows() == n && dh.cols() == hd && dc.same_shape(dh), "lstm_backward: gradient shape mismatch");
  Tensor dz = Tensor::matrix(n, 4 * hd);
  LstmStepGrads out;
  out.dh_prev = Tensor::matrix(n, hd);
  out.dc_prev = Tensor::matrix(n, hd);
  for (std::size_t r = 0; r < n; ++r) {
    if (!cache.mask.empty() && !cache.mask[r]) {
      for (std::size_t j = 0; j < hd; ++j) {
        out.dh_prev.at(r, j) = dh.at(r, j);
        out.dc_prev.at(r, j) = dc.at(r, j);
      }
      continue;
    }
    double* dzr = dz.data() + r * 4 * hd;
    for (std::size_t j = 0; j < hd; ++j) {
      const double ig = cache.i.at(r, j), fg = cache.f.at(r, j), gg = cache.g.at(r, j), og = cache.o.at(r, j);
      const double tc = cache.tanh_c.at(r, j);
      const double dct = dc.at(r, j) + dh.at(r, j) * og * (1.0 - tc * tc);
      dzr[j] = dct * gg * ig * (1.0 - ig);
      dzr[hd + j] = dct * cache.c_prev.at(r, j) * fg * (1.0 - fg);
      dzr[2 * hd + j] = dct * ig * (1.0 - gg * gg);
      dzr[3 * hd + j] = dh.at(r, j) * tc * og * (1.0 - og);
      out.dc_prev.at(r, j) = dct * fg;
    }
  }
  gemm_at_b_acc(cache.x, dz, dwx);
  gemm_at_b_acc(cache.h_prev, dz, dwh);
  bias_grad_acc(dz, db);
  out.dx = Tensor::matrix(n, p.input_dim());
  gemm_a_bt(dz, p.wx, out.dx);
  Tensor dh_gates = Tensor::matrix(n, hd);
  gemm_a_bt(dz, p.wh, dh_gates);
  for (std::size_t r = 0; r < n; ++r) {
    if (!cache.mask.empty() && !cache.mask[r]) continue;
    for (std::size_t j = 0; j < hd; ++j) out.dh_prev.at(r, j) = dh_gates.at(r, j);
  }
  return out;
}

LstmSequence lstm_sequence_forward(const std::vector<Tensor>& xs, const std::vector<std::vector<std::uint8_t>>& mask,
                                   const LstmWeights& p) {
  require(mask.empty() || mask.size() == xs.size(), "lstm_sequence: mask has wrong number of steps");
  LstmSequence seq;
  const std::size_t n = xs.empty() ? 0 : xs.front().rows();
  seq.h = Tensor::matrix(n, p.hidden());
  seq.c = Tensor::matrix(n, p.hidden());
  seq.steps.reserve(xs.size());
  for (std::size_t t = 0; t < xs.size(); ++t) {
    std::span<const std::uint8_t> m;
    if (!mask.empty()) m = mask[t];
    seq.steps.push_back(lstm_cell_forward(xs[t], seq.h, seq.c, p, m));
    seq.h = seq.steps.back().h;
    seq.c = seq.steps.back().c;
  }
  return seq;
}

std::vector<Tensor> lstm_sequence_backward(const LstmSequence& seq, const LstmWeights& p, const Tensor& dh_final,
                                           Tensor& dwx, Tensor& dwh, Tensor& db) {
  std::vector<Tensor> dxs(seq.steps.size());
  Tensor dh = dh_final;
  Tensor dc(dh.shape());
  for (std::size_t t = seq.steps.size(); t-- > 0;) {
    LstmStepGrads g = lstm_cell_backward(seq.steps[t], p, dh, dc, dwx, dwh, db);
    dxs[t] = std::move(g.dx);
    dh = std::move(g.dh_prev);
    dc = std::move(g.dc_prev);
  }
  return dxs;
}

// ---------------------------------------------------------------------------

double bce_loss(std::span<const double> yhat, std::span<const double> y) {
  require(yhat.size() == y.size(), "bce: size mismatch");
  require(!y.empty(), "bce: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(yhat[i], kBceClip, 1.0 - kBceClip);
    s += y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  return -s / static_cast<double>(y.size());
}

std::vector<double> bce_backward(std::span<const double> yhat, std::span<const double> y) {
  require(yhat.size() == y.size(), "bce: size mismatch");
  std::vector<double> g(y.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = yhat[i];
    if (p < kBceClip || p > 1.0 - kBceClip) continue;
    g[i] = -(y[i] / p - (1.0 - y[i]) / (1.0 - p)) * inv_n;
  }
  return g;
}

// ---------------------------------------------------------------------------

void AdamState::init(std::span<Param* const> params) {
  t = 0;
  m.clear();
  v.clear();
  for (const Param* p : params) {
    m.emplace_back(p->value.shape());
    v.emplace_back(p->value.shape());
  }
}

void adam_step(std::span<Param* const> params, AdamState& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw InvalidArgument("adam: optimizer state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Param& p = *params[k];
    if (!state.m[k].same_shape(p.value) || !p.grad.same_shape(p.value))
      throw InvalidArgument("adam: shape mismatch for parameter '" + p.name + "'");
    for (double g : p.grad.values()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets, double eps) {
  GradCheckResult res;
  for (const GradTarget& t : targets) {
    require(t.value->same_shape(*t.analytic), "grad_check: analytic gradient shape mismatch for " + t.name);
    for (std::size_t i = 0; i < t.value->size(); ++i) {
      const double orig = (*t.value)[i];
      (*t.value)[i] = orig + eps;
      const double fp = loss();
      (*t.value)[i] = orig - eps;
      const double fm = loss();
      (*t.value)[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = (*t.analytic)[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst = t.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace routerank::nd
