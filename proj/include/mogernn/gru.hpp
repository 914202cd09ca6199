#pragma once

#include <vector>

#include "mogernn/aggregators.hpp"
#include "mogernn/rng.hpp"
#include "mogernn/tensor.hpp"

// GRU cell whose input transform is a graph aggregation (the linear map of a
// plain GRU replaced by diffusion convolution by default), plus the
// encoder/decoder folds. The cell maps the concatenated width 1+H₂ to H₂.

namespace mogernn {

// One gate's aggregation transform. Diffusion carries per-step weight
// matrices; the parameterless kinds are followed by a learnable projection
// to reach the hidden width.
struct GruGateParams {
  AggregatorKind kind = AggregatorKind::diffusion;
  DiffusionWeights diff;  // (d+H₂)×H₂ per step, diffusion kind
  Tensor w_proj;          // (d+H₂)×H₂, other kinds
  Tensor bias;            // H₂

  static GruGateParams init(AggregatorKind kind, std::size_t in_width, std::size_t hidden,
                            std::size_t diffusion_steps, Rng& rng) {
    GruGateParams g;
    g.kind = kind;
    if (kind == AggregatorKind::diffusion)
      g.diff = DiffusionWeights::init(diffusion_steps, in_width, hidden, rng);
    else
      g.w_proj = Tensor::glorot(in_width, hidden, rng);
    g.bias = Tensor::param_zeros({hidden});
    return g;
  }

  Tensor transform(const Tensor& xh, const Tensor& adj, bool diffusion_transposed) const {
    Tensor a = kind == AggregatorKind::diffusion
                   ? aggregate_diffusion(xh, adj, diff, diffusion_transposed)
                   : matmul(aggregate(kind, xh, adj), w_proj);
    return add_rowvec(a, bias);
  }

  template <typename Fn>
  void visit(const std::string& base, Fn&& fn) {
    for (std::size_t k = 0; k < diff.steps(); ++k) {
      fn(base + ".diff.k" + std::to_string(k) + ".out", diff.w_out[k]);
      fn(base + ".diff.k" + std::to_string(k) + ".in", diff.w_in[k]);
    }
    if (kind != AggregatorKind::diffusion) fn(base + ".w_proj", w_proj);
    fn(base + ".bias", bias);
  }
};

struct GraphGruParams {
  std::size_t hidden = 0;  // H₂
  GruGateParams reset, update, candidate;
  bool diffusion_transposed = false;

  static GraphGruParams init(AggregatorKind kind, std::size_t in_width, std::size_t hidden,
                             std::size_t diffusion_steps, bool diffusion_transposed, Rng& rng) {
    GraphGruParams p;
    p.hidden = hidden;
    p.diffusion_transposed = diffusion_transposed;
    p.reset = GruGateParams::init(kind, in_width, hidden, diffusion_steps, rng);
    p.update = GruGateParams::init(kind, in_width, hidden, diffusion_steps, rng);
    p.candidate = GruGateParams::init(kind, in_width, hidden, diffusion_steps, rng);
    return p;
  }

  template <typename Fn>
  void visit(const std::string& base, Fn&& fn) {
    reset.visit(base + ".r", fn);
    update.visit(base + ".u", fn);
    candidate.visit(base + ".c", fn);
  }
};

// Eqs. 10–13:
//   r_t = sigmoid(Agg_r(x_t ‖ h_{t−1}) + b_r)
//   u_t = sigmoid(Agg_u(x_t ‖ h_{t−1}) + b_u)
//   c_t = tanh(Agg_c(x_t ‖ (r_t ⊙ h_{t−1})) + b_c)
//   h_t = u_t ⊙ h_{t−1} + (1 − u_t) ⊙ c_t
inline Tensor gru_cell_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& adj,
                            const GraphGruParams& p) {
  if (x_t.rows() != h_prev.rows() || h_prev.cols() != p.hidden)
    throw ShapeError("gru_cell_step: x " + shape_str(x_t.shape()) + " vs h " +
                     shape_str(h_prev.shape()));
  Tensor xh = concat_lastdim(x_t, h_prev);
  Tensor r = sigmoid(p.reset.transform(xh, adj, p.diffusion_transposed));
  Tensor u = sigmoid(p.update.transform(xh, adj, p.diffusion_transposed));
  Tensor xc = concat_lastdim(x_t, mul(r, h_prev));
  Tensor c = tanh_act(p.candidate.transform(xc, adj, p.diffusion_transposed));
  return add(mul(u, h_prev), mul(rsub_scalar(1.0, u), c));
}

// Folds the cell over the P history steps from h₀ = 0, compressing the
// sequence into one hidden state.
inline Tensor encode(const Tensor& history, const Tensor& adj, const GraphGruParams& p) {
  if (history.rank() != 2) throw ShapeError("encode: history must be N×P");
  const std::size_t steps = history.cols();
  if (steps == 0) throw ValueError("encode: empty history (P = 0)");
  Tensor h = Tensor::zeros({history.rows(), p.hidden});
  for (std::size_t t = 0; t < steps; ++t)
    h = gru_cell_step(slice_lastdim(history, t, 1), h, adj, p);
  return h;
}

struct GruDecoderParams {
  GraphGruParams cell;
  Tensor w_out;  // H₂×1
  Tensor b_out;  // 1

  static GruDecoderParams init(AggregatorKind kind, std::size_t in_width, std::size_t hidden,
                               std::size_t diffusion_steps, bool diffusion_transposed, Rng& rng) {
    GruDecoderParams d;
    d.cell = GraphGruParams::init(kind, in_width, hidden, diffusion_steps, diffusion_transposed, rng);
    d.w_out = Tensor::glorot(hidden, 1, rng);
    d.b_out = Tensor::param_zeros({1});
    return d;
  }

  template <typename Fn>
  void visit(const std::string& base, Fn&& fn) {
    cell.visit(base, fn);
    fn(base + ".out.w", w_out);
    fn(base + ".out.b", b_out);
  }
};

// Emits F steps starting from the encoder state. The first input is the zero
// token; each later input is the teacher value with probability tf_rate (one
// Bernoulli draw per step, shared across nodes) and the decoder's own
// prediction otherwise. With tf_rate = 0 no draws are consumed and the
// teacher is ignored entirely. `teacher_rows`, when given (N×1 binary),
// limits teacher feeding to those rows, with own predictions elsewhere.
inline Tensor decode(const Tensor& h0, const Tensor& adj, std::size_t horizon,
                     const GruDecoderParams& p, const Tensor* teacher, double tf_rate, Rng& rng,
                     const Tensor* teacher_rows = nullptr) {
  if (horizon == 0) throw ValueError("decode: horizon F must be positive");
  const std::size_t n = h0.rows();
  if (teacher && (teacher->rank() != 2 || teacher->rows() != n || teacher->cols() != horizon))
    throw ShapeError("decode: teacher " + shape_str(teacher->shape()) + " vs N=" +
                     std::to_string(n) + ", F=" + std::to_string(horizon));
  if (tf_rate > 0.0 && !teacher)
    throw ValueError("decode: tf_rate > 0 requires a teacher sequence");

  Tensor h = h0;
  Tensor x = Tensor::zeros({n, 1});
  std::vector<Tensor> outputs;
  outputs.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    h = gru_cell_step(x, h, adj, p.cell);
    Tensor y = add_rowvec(matmul(h, p.w_out), p.b_out);
    outputs.push_back(y);
    if (t + 1 < horizon) {
      const bool use_teacher = teacher && tf_rate > 0.0 && rng.bernoulli(tf_rate);
      if (use_teacher) {
        Tensor truth = slice_lastdim(*teacher, t, 1);
        x = teacher_rows ? where_mask(*teacher_rows, truth, y) : truth;
      } else {
        x = y;
      }
    }
  }
  return concat_lastdim(std::span<const Tensor>(outputs.data(), outputs.size()));
}

}  // namespace mogernn
