#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "routerank/common.hpp"
#include "routerank/rng.hpp"

namespace routerank::nd {

/// Dense row-major float64 tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
  static Tensor vector(std::size_t n, double fill = 0.0) { return Tensor({n}, fill); }
  static Tensor of(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Trailing extent for 2-D tensors; size() for 1-D.
  std::size_t cols() const { return shape_.size() >= 2 ? shape_[1] : data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(double v);
  void zero() { fill(0.0); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

/// Named trainable tensor with its gradient buffer.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}
};

// Initializers.
void init_xavier_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);
void init_normal(Tensor& w, double stddev, Rng& rng);

// ---------------------------------------------------------------------------
// Layers. Backward functions *accumulate* parameter gradients and
// *overwrite* input gradients.

/// y = x W + b;  x [n, d_in], W [d_in, d_out], b [d_out].
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor& dw, Tensor& db);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);
Tensor sigmoid_forward(const Tensor& x);
/// Takes the forward output y = sigmoid(x).
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);
Tensor tanh_forward(const Tensor& x);
/// Takes the forward output y = tanh(x).
Tensor tanh_backward(const Tensor& y, const Tensor& dy);

/// Row lookup. Rows equal to `padding_id` produce zeros and receive no
/// gradient; any other id outside [0, V) throws.
Tensor embedding_forward(std::span<const std::int64_t> ids, const Tensor& table,
                         std::optional<std::int64_t> padding_id = std::nullopt);
void embedding_backward(std::span<const std::int64_t> ids, const Tensor& dy, Tensor& dtable,
                        std::optional<std::int64_t> padding_id = std::nullopt);

/// Full-rank cross layer: x0 * (xl W + b) + xl.
struct CrossCache {
  Tensor affine;  // xl W + b
};
Tensor cross_forward(const Tensor& x0, const Tensor& xl, const Tensor& w, const Tensor& b, CrossCache* cache = nullptr);
void cross_backward(const Tensor& x0, const Tensor& xl, const Tensor& w, const CrossCache& cache, const Tensor& dy,
                    Tensor& dx0, Tensor& dxl, Tensor& dw, Tensor& db);

// ---------------------------------------------------------------------------
// LSTM. Gate blocks in the 4h axis are ordered (input, forget, cell, output).

struct LstmWeights {
  const Tensor& wx;  // [d_in, 4h]
  const Tensor& wh;  // [h, 4h]
  const Tensor& b;   // [4h]
  std::size_t hidden() const { return wh.rows(); }
  std::size_t input_dim() const { return wx.rows(); }
};

struct LstmStepCache {
  Tensor x, h_prev, c_prev;
  Tensor i, f, g, o;  // activated gates [n, h]
  Tensor c, tanh_c, h;
  std::vector<std::uint8_t> mask;  // empty = all active
};

LstmStepCache lstm_cell_forward(const Tensor& x, const Tensor& h, const Tensor& c, const LstmWeights& p,
                                std::span<const std::uint8_t> mask = {});

/// Backward through one step. Inputs dh, dc are gradients w.r.t. this
/// step's outputs; returns gradients w.r.t. (x, h_prev, c_prev).
struct LstmStepGrads {
  Tensor dx, dh_prev, dc_prev;
};
LstmStepGrads lstm_cell_backward(const LstmStepCache& cache, const LstmWeights& p, const Tensor& dh, const Tensor& dc,
                                 Tensor& dwx, Tensor& dwh, Tensor& db);

struct LstmSequence {
  std::vector<LstmStepCache> steps;
  Tensor h, c;  // final state
};

/// Runs the cell over T steps from zero state. `mask` is [T][n]; a masked
/// row carries (h, c) through unchanged.
LstmSequence lstm_sequence_forward(const std::vector<Tensor>& xs, const std::vector<std::vector<std::uint8_t>>& mask,
                                   const LstmWeights& p);
/// Back-propagation through time from a gradient on the final h.
std::vector<Tensor> lstm_sequence_backward(const LstmSequence& seq, const LstmWeights& p, const Tensor& dh_final,
                                           Tensor& dwx, Tensor& dwh, Tensor& db);

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kBceClip = 1e-12;

/// Mean binary cross-entropy with predictions clipped to [1e-12, 1 - 1e-12].
double bce_loss(std::span<const double> yhat, std::span<const double> y);
/// dL/dyhat; zero where the clip is active.
std::vector<double> bce_backward(std::span<const double> yhat, std::span<const double> y);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  /// Allocates zero moments shaped like `params`.
  void init(std::span<Param* const> params);
};

/// One bias-corrected Adam update. Throws NumericError naming the first
/// parameter whose gradient is non-finite (nothing is updated then).
void adam_step(std::span<Param* const> params, AdamState& state, double lr);

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradTarget {
  std::string name;
  Tensor* value;           // perturbed in place, restored afterwards
  const Tensor* analytic;  // gradient computed by the backward pass
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "name[index]"
};

/// Central differences over every element of every target.
/// rel err = |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           double eps = 1e-5);

}  // namespace routerank::nd
