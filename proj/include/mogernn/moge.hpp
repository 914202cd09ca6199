#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mogernn/aggregators.hpp"
#include "mogernn/graph.hpp"
#include "mogernn/tensor.hpp"

// Mixture of Graph Experts: parallel aggregator pipelines scored by a
// node-local gating network with sparse top-K selection; estimates are
// spliced into unobserved slots only (observed entries pass through bitwise).
// Parameter count is independent of the node count — that is what makes the
// block inductive.

namespace mogernn {

enum class GatingMode { sparse_topk, average };

inline const char* gating_mode_name(GatingMode m) {
  return m == GatingMode::sparse_topk ? "sparse_topk" : "average";
}

inline GatingMode parse_gating_mode(const std::string& s) {
  if (s == "sparse_topk") return GatingMode::sparse_topk;
  if (s == "average") return GatingMode::average;
  throw ValueError("unknown gating mode: " + s);
}

// N×P binary matrix; zeros mark unobserved entries. A node's row is all-zero
// iff the node is unobserved for this window.
struct ObservationMask {
  Tensor m;

  static ObservationMask from_tensor(Tensor mask) {
    for (double v : mask.data())
      if (v != 0.0 && v != 1.0) throw ValueError("ObservationMask: entries must be 0 or 1");
    return ObservationMask{std::move(mask)};
  }

  static ObservationMask all_observed(std::size_t n, std::size_t p) {
    return ObservationMask{Tensor::full({n, p}, 1.0)};
  }

  std::vector<std::uint8_t> observed_rows() const {
    const std::size_t n = m.rows(), p = m.cols();
    std::vector<std::uint8_t> obs(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p; ++j)
        if (m.at(i, j) != 0.0) {
          obs[i] = 1;
          break;
        }
    return obs;
  }
};

// One graph expert: embed (XW₁), aggregate, project back, activate.
struct ExpertParams {
  AggregatorKind kind = AggregatorKind::mean;
  Tensor w1;              // P×H₂ embedding
  DiffusionWeights diff;  // H₂×H₂ per step, diffusion kind only
  Tensor w_out;           // H₂×P
  Tensor b_out;           // P

  static ExpertParams init(AggregatorKind kind, std::size_t p, std::size_t h2,
                           std::size_t diffusion_steps, Rng& rng) {
    ExpertParams e;
    e.kind = kind;
    e.w1 = Tensor::glorot(p, h2, rng);
    if (kind == AggregatorKind::diffusion)
      e.diff = DiffusionWeights::init(diffusion_steps, h2, h2, rng);
    e.w_out = Tensor::glorot(h2, p, rng);
    e.b_out = Tensor::param_zeros({p});
    return e;
  }
};

// Two-layer scoring network, Eq. 6.
struct GateParams {
  Tensor w1;  // P×H_g
  Tensor b1;  // H_g
  Tensor w2;  // H_g×N_e
  Tensor b2;  // N_e

  // Biases start small but nonzero: zero-input (unobserved) rows score every
  // expert through the biases alone, and all-zero biases would park the
  // top-K selection exactly on an N_e-way tie.
  static GateParams init(std::size_t p, std::size_t h_gate, std::size_t n_experts, Rng& rng) {
    GateParams g;
    g.w1 = Tensor::glorot(p, h_gate, rng);
    g.b1 = Tensor::param_zeros({h_gate});
    for (auto& v : g.b1.mutable_data()) v = rng.uniform(0.01, 0.1);
    g.w2 = Tensor::glorot(h_gate, n_experts, rng);
    g.b2 = Tensor::param_zeros({n_experts});
    for (auto& v : g.b2.mutable_data()) v = rng.uniform(-0.1, 0.1);
    return g;
  }
};

struct MoGEParams {
  std::vector<ExpertParams> experts;
  GateParams gate;
  std::size_t top_k = 2;
  GatingMode gating = GatingMode::sparse_topk;
  bool diffusion_transposed = false;

  static MoGEParams init(const std::vector<AggregatorKind>& kinds, std::size_t p, std::size_t h2,
                         std::size_t h_gate, std::size_t diffusion_steps, std::size_t top_k,
                         GatingMode gating, Rng& rng) {
    if (kinds.empty()) throw ValueError("MoGEParams: need at least one expert");
    MoGEParams m;
    for (AggregatorKind k : kinds) m.experts.push_back(ExpertParams::init(k, p, h2, diffusion_steps, rng));
    m.gate = GateParams::init(p, h_gate, kinds.size(), rng);
    m.top_k = std::min(top_k, kinds.size());
    m.gating = gating;
    return m;
  }

  std::size_t n_experts() const { return experts.size(); }

  template <typename Fn>
  void visit(Fn&& fn) {
    for (std::size_t e = 0; e < experts.size(); ++e) {
      const std::string base = "moge.expert" + std::to_string(e) + "." +
                               aggregator_kind_name(experts[e].kind) + ".";
      fn(base + "w1", experts[e].w1);
      for (std::size_t k = 0; k < experts[e].diff.steps(); ++k) {
        fn(base + "diff.k" + std::to_string(k) + ".out", experts[e].diff.w_out[k]);
        fn(base + "diff.k" + std::to_string(k) + ".in", experts[e].diff.w_in[k]);
      }
      fn(base + "w_out", experts[e].w_out);
      fn(base + "b_out", experts[e].b_out);
    }
    fn("moge.gate.w1", gate.w1);
    fn("moge.gate.b1", gate.b1);
    fn("moge.gate.w2", gate.w2);
    fn("moge.gate.b2", gate.b2);
  }
};

// Eq. 5: X_e = Act(Linear(Agg_e(XW₁, 𝒜′))). Act is ReLU.
inline Tensor expert_forward(const Tensor& x, const Tensor& adj_masked, const ExpertParams& e,
                             bool diffusion_transposed = false) {
  Tensor embedded = matmul(x, e.w1);
  Tensor aggregated = e.kind == AggregatorKind::diffusion
                          ? aggregate_diffusion(embedded, adj_masked, e.diff, diffusion_transposed)
                          : aggregate(e.kind, embedded, adj_masked);
  return relu(add_rowvec(matmul(aggregated, e.w_out), e.b_out));
}

// Eq. 6 scores: S = Linear(Act(Linear(X))).
inline Tensor gate_scores(const Tensor& x, const GateParams& g) {
  Tensor hidden = relu(add_rowvec(matmul(x, g.w1), g.b1));
  return add_rowvec(matmul(hidden, g.w2), g.b2);
}

// Eqs. 6–8: score, keep top-K per node, softmax. Exactly K nonzero weights
// per row, summing to 1.
inline Tensor gate_weights(const Tensor& x, std::size_t k, const GateParams& g) {
  Tensor s = gate_scores(x, g);
  if (k < 1 || k > s.cols())
    throw ValueError("gate_weights: K=" + std::to_string(k) + " outside [1, " +
                     std::to_string(s.cols()) + "]");
  return softmax_rows(keep_topk(s, k));
}

// Full block, Eq. 9: out = X ⊙ M + X_moge ⊙ (1−M). The input is zero-filled
// through M on entry, so the experts and the gate never see raw values of
// unobserved nodes; 𝒜′ additionally blocks them as message sources.
inline Tensor moge_forward(const Tensor& x, const ObservationMask& mask, const Tensor& adj,
                           const MoGEParams& p) {
  if (x.shape() != mask.m.shape())
    throw ShapeError("moge_forward: X " + shape_str(x.shape()) + " vs mask " +
                     shape_str(mask.m.shape()));
  const Tensor adj_masked = mask_adjacency(adj, mask.observed_rows());
  const Tensor x0 = mul(x, mask.m);

  std::vector<Tensor> expert_outs;
  expert_outs.reserve(p.experts.size());
  for (const ExpertParams& e : p.experts)
    expert_outs.push_back(expert_forward(x0, adj_masked, e, p.diffusion_transposed));

  Tensor weights = p.gating == GatingMode::sparse_topk
                       ? gate_weights(x0, p.top_k, p.gate)
                       : Tensor::full({x.rows(), p.n_experts()},
                                      1.0 / static_cast<double>(p.n_experts()));

  Tensor combined = mul_rowbroadcast(expert_outs[0], slice_lastdim(weights, 0, 1));
  for (std::size_t e = 1; e < expert_outs.size(); ++e)
    combined = add(combined, mul_rowbroadcast(expert_outs[e], slice_lastdim(weights, e, 1)));

  return where_mask(mask.m, x0, combined);
}

}  // namespace mogernn
