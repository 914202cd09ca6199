#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "mogernn/common.hpp"
#include "mogernn/rng.hpp"

// Reverse-mode autodiff over dense float64 tensors. A Tensor is a value
// handle onto a shared node; primitive ops record a backward closure onto the
// thread-local active Tape. Running without an active tape is plain forward
// evaluation (inference path). Double precision everywhere: the engine is
// checked against central finite differences at 1e-5, which float32 cannot
// sustain.

namespace mogernn {

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or downstream of one
  bool is_leaf = true;      // false iff produced by a recorded op

  std::size_t numel() const { return data.size(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void reset_grad() { grad.assign(data.size(), 0.0); }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

class Tensor;
void backward(const Tensor& loss);

// Ordered record of executed primitives. Replaying in reverse visits each op
// exactly once in a valid topological order because records are appended in
// execution order.
class Tape {
 public:
  struct Record {
    detail::NodePtr out;
    std::function<void()> pull;  // distributes out->grad into input grads
  };

  void record(detail::NodePtr out, std::function<void()> pull) {
    records_.push_back({std::move(out), std::move(pull)});
  }

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  // Backward from a scalar loss. Non-leaf grads are recomputed from scratch
  // each call; leaf grads accumulate across calls until explicitly zeroed —
  // the training loop resets per step.
  void run_backward(const detail::NodePtr& loss) {
    for (auto& r : records_) {
      if (!r.out->is_leaf) r.out->reset_grad();
    }
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->pull();
  }

  static Tape*& active_slot() {
    thread_local Tape* active = nullptr;
    return active;
  }
  static Tape* active() { return active_slot(); }

  // RAII activation; tapes and their tensors are confined to one thread.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_slot()) { active_slot() = &t; }
    ~Scope() { active_slot() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  // Temporarily disables recording (validation / inference inside training).
  class Pause {
   public:
    Pause() : prev_(active_slot()) { active_slot() = nullptr; }
    ~Pause() { active_slot() = prev_; }
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    Tape* prev_;
  };

 private:
  std::vector<Record> records_;
};

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::TensorNode>()) {
    node_->shape = {};
    node_->data = {0.0};
  }

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->data.assign(shape_numel(t.node_->shape), 0.0);
    return t;
  }

  static Tensor full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("Tensor::from: " + shape_str(shape) + " needs " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from({}, {v}); }

  // Glorot-uniform initialised parameter (requires_grad set).
  static Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = zeros({fan_in, fan_out});
    for (double& v : t.node_->data) v = rng.uniform(-limit, limit);
    t.set_requires_grad(true);
    return t;
  }

  static Tensor param_zeros(Shape shape) {
    Tensor t = zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }

  double value() const {
    if (size() != 1) throw ShapeError("Tensor::value: not a scalar, shape " + shape_str(shape()));
    return node_->data[0];
  }

  double at(std::size_t i) const { return node_->data.at(i); }
  double at(std::size_t r, std::size_t c) const {
    return node_->data[r * cols() + c];
  }
  void set(std::size_t r, std::size_t c, double v) { node_->data[r * cols() + c] = v; }
  void set(std::size_t i, double v) { node_->data.at(i) = v; }

  std::size_t rows() const {
    if (rank() != 2) throw ShapeError("Tensor::rows: rank-2 expected, got " + shape_str(shape()));
    return node_->shape[0];
  }
  std::size_t cols() const {
    if (rank() != 2) throw ShapeError("Tensor::cols: rank-2 expected, got " + shape_str(shape()));
    return node_->shape[1];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) {
    node_->requires_grad = v;
    node_->needs_grad = v || node_->needs_grad;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  double grad_at(std::size_t i) const { return node_->grad.at(i); }
  double grad_at(std::size_t r, std::size_t c) const { return node_->grad[r * cols() + c]; }

  void zero_grad() {
    if (node_->requires_grad) node_->reset_grad();
  }

  // Detached value copy (fresh leaf, no grad history).
  Tensor copy_values() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    return t;
  }

  detail::NodePtr node() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
  detail::NodePtr node_;

  friend Tensor make_op_output(Shape shape, std::initializer_list<const Tensor*> inputs);
  friend void backward(const Tensor& loss);
};

// ----- op plumbing -----

inline bool any_needs_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (t->node()->needs_grad) return true;
  return false;
}

inline Tensor make_op_output(Shape shape, std::initializer_list<const Tensor*> inputs) {
  Tensor out = Tensor::zeros(std::move(shape));
  if (Tape::active() && any_needs_grad(inputs)) {
    out.node_->needs_grad = true;
    out.node_->is_leaf = false;
  }
  return out;
}

inline bool recording(const Tensor& out) {
  return Tape::active() && out.node()->needs_grad;
}

// ----- primitives -----

// Standard matrix product a[m×k]·b[k×n]. Gradients: ga += g·bᵀ, gb += aᵀ·g.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_op_output({m, n}, {&a, &b});
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) po[i * n + j] += av * pb[p * n + j];
      }
  }
  if (recording(out)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record(on, [an, bn, on, m, k, n] {
      const double* g = on->grad.data();
      if (an->needs_grad) {
        an->ensure_grad();
        double* ga = an->grad.data();
        const double* pb = bn->data.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            if (gv == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * pb[p * n + j];
          }
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        double* gb = bn->grad.data();
        const double* pa = an->data.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
          }
      }
    });
  }
  return out;
}

namespace detail {

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename Fwd>
Tensor elementwise_binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                          double da_coeff_from_b, bool da_is_b, double db_coeff_from_a,
                          bool db_is_a) {
  // Covers add/sub/mul: derivative w.r.t. each input is either a constant
  // coefficient or the other operand.
  check_same_shape(name, a, b);
  Tensor out = make_op_output(a.shape(), {&a, &b});
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = fwd(a.data()[i], b.data()[i]);
  if (recording(out)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record(on, [an, bn, on, n, da_coeff_from_b, da_is_b, db_coeff_from_a, db_is_a] {
      const double* g = on->grad.data();
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          an->grad[i] += g[i] * (da_is_b ? bn->data[i] : da_coeff_from_b);
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          bn->grad[i] += g[i] * (db_is_a ? an->data[i] : db_coeff_from_a);
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary("add", a, b, [](double x, double y) { return x + y; }, 1.0,
                                    false, 1.0, false);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary("sub", a, b, [](double x, double y) { return x - y; }, 1.0,
                                    false, -1.0, false);
}

// Hadamard product; realizes the ⊙ of the gating/GRU equations.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary("mul", a, b, [](double x, double y) { return x * y; }, 0.0,
                                    true, 0.0, true);
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = make_op_output(a.shape(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) out.mutable_data()[i] = a.data()[i] * c;
  if (recording(out)) {
    auto an = a.node(), on = out.node();
    const std::size_t n = a.size();
    Tape::active()->record(on, [an, on, n, c] {
      if (!an->needs_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += c * on->grad[i];
    });
  }
  return out;
}

// c − a, elementwise (used for the GRU's (1 − u) factor).
inline Tensor rsub_scalar(double c, const Tensor& a) {
  Tensor out = make_op_output(a.shape(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) out.mutable_data()[i] = c - a.data()[i];
  if (recording(out)) {
    auto an = a.node(), on = out.node();
    const std::size_t n = a.size();
    Tape::active()->record(on, [an, on, n] {
      if (!an->needs_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] -= on->grad[i];
    });
  }
  return out;
}

// X[n×m] + v[m], v broadcast over rows (bias add).
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || v.dim(0) != x.cols())
    throw ShapeError("add_rowvec: shapes " + shape_str(x.shape()) + " and " +
                     shape_str(v.shape()));
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = make_op_output({n, m}, {&x, &v});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out.mutable_data()[i * m + j] = x.data()[i * m + j] + v.data()[j];
  if (recording(out)) {
    auto xn = x.node(), vn = v.node(), on = out.node();
    Tape::active()->record(on, [xn, vn, on, n, m] {
      const double* g = on->grad.data();
      if (xn->needs_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < n * m; ++i) xn->grad[i] += g[i];
      }
      if (vn->needs_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) vn->grad[j] += g[i * m + j];
      }
    });
  }
  return out;
}

// X[n×m] scaled per row by s (shape [n] or [n×1]); the per-node expert
// weight broadcast of X_moge = Σ_e w_e ⊙ X_e.
inline Tensor mul_rowbroadcast(const Tensor& x, const Tensor& s) {
  if (x.rank() != 2 || s.size() != x.rows() || (s.rank() == 2 && s.cols() != 1))
    throw ShapeError("mul_rowbroadcast: shapes " + shape_str(x.shape()) + " and " +
                     shape_str(s.shape()));
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = make_op_output({n, m}, {&x, &s});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out.mutable_data()[i * m + j] = x.data()[i * m + j] * s.data()[i];
  if (recording(out)) {
    auto xn = x.node(), sn = s.node(), on = out.node();
    Tape::active()->record(on, [xn, sn, on, n, m] {
      const double* g = on->grad.data();
      if (xn->needs_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) xn->grad[i * m + j] += g[i * m + j] * sn->data[i];
      }
      if (sn->needs_grad) {
        sn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * xn->data[i * m + j];
          sn->grad[i] += acc;
        }
      }
    });
  }
  return out;
}

enum class Activation { sigmoid, tanh, relu };

inline Tensor apply_activation(const Tensor& x, Activation kind) {
  Tensor out = make_op_output(x.shape(), {&x});
  const std::size_t n = x.size();
  switch (kind) {
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = std::tanh(x.data()[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
      break;
    default:
      throw ValueError("apply_activation: invalid kind");
  }
  if (recording(out)) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on, n, kind] {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      const double* y = on->data.data();
      for (std::size_t i = 0; i < n; ++i) {
        double d;
        switch (kind) {
          case Activation::sigmoid: d = y[i] * (1.0 - y[i]); break;
          case Activation::tanh: d = 1.0 - y[i] * y[i]; break;
          default: d = xn->data[i] > 0.0 ? 1.0 : 0.0; break;
        }
        xn->grad[i] += g[i] * d;
      }
    });
  }
  return out;
}

inline Tensor sigmoid(const Tensor& x) { return apply_activation(x, Activation::sigmoid); }
inline Tensor tanh_act(const Tensor& x) { return apply_activation(x, Activation::tanh); }
inline Tensor relu(const Tensor& x) { return apply_activation(x, Activation::relu); }

// Row-wise softmax, stabilized by row-max subtraction. −∞ entries (dropped
// experts after KeepTopK) map to exactly 0. A row that is entirely −∞ has no
// distribution and is rejected.
inline Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("softmax_rows: rank-2 expected, got " + shape_str(x.shape()));
  const std::size_t n = x.rows(), m = x.cols();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Tensor out = make_op_output({n, m}, {&x});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = neg_inf;
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, x.data()[i * m + j]);
    if (mx == neg_inf)
      throw NumericError("softmax_rows: degenerate row " + std::to_string(i) + " (all -inf)");
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double v = x.data()[i * m + j];
      double e = (v == neg_inf) ? 0.0 : std::exp(v - mx);
      out.mutable_data()[i * m + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < m; ++j) out.mutable_data()[i * m + j] /= denom;
  }
  if (recording(out)) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on, n, m] {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      const double* y = on->data.data();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
        for (std::size_t j = 0; j < m; ++j)
          xn->grad[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
      }
    });
  }
  return out;
}

// Per row, keeps the K largest entries and replaces the rest with −∞ so the
// following softmax assigns them exactly zero weight. Ties at the K-th place
// go to the lower column index. Gradient passes through kept entries only.
inline Tensor keep_topk(const Tensor& x, std::size_t k) {
  if (x.rank() != 2) throw ShapeError("keep_topk: rank-2 expected, got " + shape_str(x.shape()));
  const std::size_t n = x.rows(), m = x.cols();
  if (k < 1 || k > m)
    throw ValueError("keep_topk: K=" + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Tensor out = make_op_output({n, m}, {&x});
  auto kept = std::make_shared<std::vector<char>>(n * m, 0);
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return x.data()[i * m + a] > x.data()[i * m + b];
    });
    for (std::size_t r = 0; r < m; ++r) {
      std::size_t j = order[r];
      bool keep = r < k;
      (*kept)[i * m + j] = keep ? 1 : 0;
      out.mutable_data()[i * m + j] = keep ? x.data()[i * m + j] : neg_inf;
    }
  }
  if (recording(out)) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on, kept, n, m] {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < n * m; ++i)
        if ((*kept)[i]) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

// Concatenation along the last dimension; inputs must agree on leading dims.
// Gradient splits back to each input slice.
inline Tensor concat_lastdim(std::span<const Tensor> parts) {
  if (parts.empty()) throw ValueError("concat_lastdim: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.empty()) throw ShapeError("concat_lastdim: rank-0 input");
  std::size_t total_last = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != s0.size())
      throw ShapeError("concat_lastdim: rank mismatch " + shape_str(s0) + " vs " +
                       shape_str(p.shape()));
    for (std::size_t d = 0; d + 1 < s0.size(); ++d)
      if (p.shape()[d] != s0[d])
        throw ShapeError("concat_lastdim: leading-dim mismatch " + shape_str(s0) + " vs " +
                         shape_str(p.shape()));
    total_last += p.shape().back();
  }
  Shape out_shape = s0;
  out_shape.back() = total_last;
  std::size_t lead = 1;
  for (std::size_t d = 0; d + 1 < s0.size(); ++d) lead *= s0[d];

  Tensor out = Tensor::zeros(out_shape);
  bool needs = false;
  for (const Tensor& p : parts) needs = needs || p.node()->needs_grad;
  if (Tape::active() && needs) {
    out.node()->needs_grad = true;
    out.node()->is_leaf = false;
  }

  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape().back();
    for (std::size_t r = 0; r < lead; ++r)
      std::copy_n(p.data().data() + r * w, w,
                  out.mutable_data().data() + r * total_last + offset);
    offset += w;
  }
  if (recording(out)) {
    std::vector<detail::NodePtr> ins;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
      ins.push_back(p.node());
      widths.push_back(p.shape().back());
    }
    auto on = out.node();
    Tape::active()->record(on, [ins, widths, on, lead, total_last] {
      std::size_t off = 0;
      for (std::size_t q = 0; q < ins.size(); ++q) {
        const std::size_t w = widths[q];
        if (ins[q]->needs_grad) {
          ins[q]->ensure_grad();
          for (std::size_t r = 0; r < lead; ++r)
            for (std::size_t j = 0; j < w; ++j)
              ins[q]->grad[r * w + j] += on->grad[r * total_last + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

inline Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_lastdim(std::span<const Tensor>(parts, 2));
}

// Contiguous slice [start, start+len) of the last dimension.
inline Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t len) {
  if (x.rank() == 0) throw ShapeError("slice_lastdim: rank-0 input");
  const std::size_t last = x.shape().back();
  if (start + len > last)
    throw ShapeError("slice_lastdim: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") exceeds width " + std::to_string(last));
  Shape out_shape = x.shape();
  out_shape.back() = len;
  std::size_t lead = 1;
  for (std::size_t d = 0; d + 1 < x.rank(); ++d) lead *= x.shape()[d];
  Tensor out = make_op_output(out_shape, {&x});
  for (std::size_t r = 0; r < lead; ++r)
    std::copy_n(x.data().data() + r * last + start, len, out.mutable_data().data() + r * len);
  if (recording(out)) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on, lead, last, start, len] {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t r = 0; r < lead; ++r)
        for (std::size_t j = 0; j < len; ++j)
          xn->grad[r * last + start + j] += on->grad[r * len + j];
    });
  }
  return out;
}

// Sum of all entries, rank-0 output.
inline Tensor sum(const Tensor& x) {
  Tensor out = make_op_output({}, {&x});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.mutable_data()[0] = acc;
  if (recording(out)) {
    auto xn = x.node(), on = out.node();
    const std::size_t n = x.size();
    Tape::active()->record(on, [xn, on, n] {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      const double g = on->grad[0];
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += g;
    });
  }
  return out;
}

// Entry-wise selection: out = mask != 0 ? a : b. The mask is data, not a
// differentiable input; selected entries pass through bitwise, which is what
// makes the Eq. 9 observed-passthrough exact.
inline Tensor where_mask(const Tensor& mask, const Tensor& a, const Tensor& b) {
  detail::check_same_shape("where_mask", mask, a);
  detail::check_same_shape("where_mask", a, b);
  const std::size_t n = a.size();
  Tensor out = make_op_output(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < n; ++i)
    out.mutable_data()[i] = mask.data()[i] != 0.0 ? a.data()[i] : b.data()[i];
  if (recording(out)) {
    auto an = a.node(), bn = b.node(), on = out.node(), mn = mask.node();
    Tape::active()->record(on, [an, bn, mn, on, n] {
      const double* g = on->grad.data();
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          if (mn->data[i] != 0.0) an->grad[i] += g[i];
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          if (mn->data[i] == 0.0) bn->grad[i] += g[i];
      }
    });
  }
  return out;
}

// Backward pass from a scalar loss through the active tape. Grads of every
// requires_grad ancestor are populated afterwards; repeated calls accumulate
// into leaf grads (the training loop resets per step).
inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ValueError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  Tape* tape = Tape::active();
  if (!tape) throw ValueError("backward: no active tape");
  if (!loss.node()->needs_grad)
    throw ValueError("backward: loss does not depend on any requires_grad tensor");
  tape->run_backward(loss.node());
}

}  // namespace mogernn
