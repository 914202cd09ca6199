#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mogernn/graph.hpp"
#include "mogernn/tensor.hpp"

// The five neighbour-message aggregators. A receiver node j pulls from the
// sources {i : 𝒜_ij > 0} (column reading, matching the aggregator sums in the
// model equations). Empty neighbourhoods yield the zero vector — that avoids
// 0/0 and max/min over empty sets, and zero is already the mask sentinel.

namespace mogernn {

enum class AggregatorKind { weighted_mean, mean, max_pool, min_pool, diffusion };

inline const char* aggregator_kind_name(AggregatorKind k) {
  switch (k) {
    case AggregatorKind::weighted_mean: return "weighted_mean";
    case AggregatorKind::mean: return "mean";
    case AggregatorKind::max_pool: return "max_pool";
    case AggregatorKind::min_pool: return "min_pool";
    case AggregatorKind::diffusion: return "diffusion";
  }
  throw ValueError("aggregator_kind_name: invalid kind");
}

inline AggregatorKind parse_aggregator_kind(const std::string& s) {
  if (s == "weighted_mean") return AggregatorKind::weighted_mean;
  if (s == "mean") return AggregatorKind::mean;
  if (s == "max_pool") return AggregatorKind::max_pool;
  if (s == "min_pool") return AggregatorKind::min_pool;
  if (s == "diffusion") return AggregatorKind::diffusion;
  throw ValueError("unknown aggregator kind: " + s);
}

namespace detail {

// Per-receiver list of (source, weight) with 𝒜_ij > 0, sources ascending.
struct NeighborPlan {
  std::vector<std::vector<std::pair<std::size_t, double>>> in_neighbors;

  static std::shared_ptr<NeighborPlan> build(const Tensor& adj) {
    if (adj.rank() != 2 || adj.rows() != adj.cols())
      throw ShapeError("aggregate: adjacency must be square, got " + shape_str(adj.shape()));
    auto plan = std::make_shared<NeighborPlan>();
    const std::size_t n = adj.rows();
    plan->in_neighbors.resize(n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) {
        const double w = adj.at(i, j);
        if (w > 0.0) plan->in_neighbors[j].push_back({i, w});
      }
    return plan;
  }
};

inline void check_agg_shapes(const Tensor& x, const Tensor& adj) {
  if (x.rank() != 2 || x.rows() != adj.rows())
    throw ShapeError("aggregate: features " + shape_str(x.shape()) + " vs adjacency " +
                     shape_str(adj.shape()));
}

}  // namespace detail

// X′_j = Σ_i X_i·𝒜_ij / Σ_i 𝒜_ij over in-neighbours (ratio cancels any
// positive rescaling of 𝒜).
inline Tensor aggregate_weighted_mean(const Tensor& x, const Tensor& adj) {
  detail::check_agg_shapes(x, adj);
  auto plan = detail::NeighborPlan::build(adj);
  const std::size_t n = x.rows(), h = x.cols();
  Tensor out = make_op_output({n, h}, {&x});
  for (std::size_t j = 0; j < n; ++j) {
    const auto& nb = plan->in_neighbors[j];
    if (nb.empty()) continue;
    double total = 0.0;
    for (const auto& [i, w] : nb) total += w;
    for (const auto& [i, w] : nb) {
      const double coeff = w / total;
      for (std::size_t c = 0; c < h; ++c)
        out.mutable_data()[j * h + c] += coeff * x.data()[i * h + c];
    }
  }
  if (recording(out)) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on, plan, n, h] {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t j = 0; j < n; ++j) {
        const auto& nb = plan->in_neighbors[j];
        if (nb.empty()) continue;
        double total = 0.0;
        for (const auto& [i, w] : nb) total += w;
        for (const auto& [i, w] : nb) {
          const double coeff = w / total;
          for (std::size_t c = 0; c < h; ++c)
            xn->grad[i * h + c] += coeff * on->grad[j * h + c];
        }
      }
    });
  }
  return out;
}

inline Tensor aggregate_mean(const Tensor& x, const Tensor& adj) {
  detail::check_agg_shapes(x, adj);
  auto plan = detail::NeighborPlan::build(adj);
  const std::size_t n = x.rows(), h = x.cols();
  Tensor out = make_op_output({n, h}, {&x});
  for (std::size_t j = 0; j < n; ++j) {
    const auto& nb = plan->in_neighbors[j];
    if (nb.empty()) continue;
    const double inv = 1.0 / static_cast<double>(nb.size());
    for (const auto& [i, w] : nb)
      for (std::size_t c = 0; c < h; ++c)
        out.mutable_data()[j * h + c] += inv * x.data()[i * h + c];
  }
  if (recording(out)) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on, plan, n, h] {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t j = 0; j < n; ++j) {
        const auto& nb = plan->in_neighbors[j];
        if (nb.empty()) continue;
        const double inv = 1.0 / static_cast<double>(nb.size());
        for (const auto& [i, w] : nb)
          for (std::size_t c = 0; c < h; ++c) xn->grad[i * h + c] += inv * on->grad[j * h + c];
      }
    });
  }
  return out;
}

namespace detail {

// Componentwise max/min pooling. The gradient routes to the arg contributor;
// ties break to the lowest node index (sources are scanned in ascending
// order with a strict comparison).
inline Tensor aggregate_extremum(const Tensor& x, const Tensor& adj, bool is_max) {
  check_agg_shapes(x, adj);
  auto plan = NeighborPlan::build(adj);
  const std::size_t n = x.rows(), h = x.cols();
  Tensor out = make_op_output({n, h}, {&x});
  auto arg = std::make_shared<std::vector<std::ptrdiff_t>>(n * h, -1);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& nb = plan->in_neighbors[j];
    if (nb.empty()) continue;
    for (std::size_t c = 0; c < h; ++c) {
      std::size_t best = nb[0].first;
      double best_v = x.data()[best * h + c];
      for (std::size_t q = 1; q < nb.size(); ++q) {
        const double v = x.data()[nb[q].first * h + c];
        if (is_max ? (v > best_v) : (v < best_v)) {
          best_v = v;
          best = nb[q].first;
        }
      }
      out.mutable_data()[j * h + c] = best_v;
      (*arg)[j * h + c] = static_cast<std::ptrdiff_t>(best);
    }
  }
  if (recording(out)) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on, arg, n, h] {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t e = 0; e < n * h; ++e) {
        const std::ptrdiff_t i = (*arg)[e];
        if (i >= 0) xn->grad[static_cast<std::size_t>(i) * h + e % h] += on->grad[e];
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor aggregate_max(const Tensor& x, const Tensor& adj) {
  return detail::aggregate_extremum(x, adj, true);
}

inline Tensor aggregate_min(const Tensor& x, const Tensor& adj) {
  return detail::aggregate_extremum(x, adj, false);
}

// Learnable weights of the diffusion convolution: one in×out matrix per
// direction per step. Step count K is w_out.size().
struct DiffusionWeights {
  std::vector<Tensor> w_out;  // W_{k,O}
  std::vector<Tensor> w_in;   // W_{k,I}

  std::size_t steps() const { return w_out.size(); }

  static DiffusionWeights init(std::size_t k_steps, std::size_t in_width, std::size_t out_width,
                               Rng& rng) {
    DiffusionWeights w;
    for (std::size_t k = 0; k < k_steps; ++k) {
      w.w_out.push_back(Tensor::glorot(in_width, out_width, rng));
      w.w_in.push_back(Tensor::glorot(in_width, out_width, rng));
    }
    return w;
  }
};

inline Tensor transpose_values(const Tensor& m) {
  const std::size_t r = m.rows(), c = m.cols();
  Tensor t = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t.set(j, i, m.at(i, j));
  return t;
}

// X′ = Σ_{k=0}^{K−1} P_f^{(k)} X W_{k,O} + P_b^{(k)} X W_{k,I} with
// P_f = D_O⁻¹𝒜, P_b = D_I⁻¹𝒜ᵀ, applied as matrix-times-features. Powers are
// built iteratively (P·(P·…X)) rather than materialized. `transposed`
// selects the literal index-form reading Σ_i (M^k)_{ij} X_i = (Mᵀ)^k X for
// sensitivity checks.
inline Tensor aggregate_diffusion(const Tensor& x, const Tensor& adj, const DiffusionWeights& w,
                                  bool transposed = false) {
  detail::check_agg_shapes(x, adj);
  if (w.steps() == 0 || w.w_in.size() != w.w_out.size())
    throw ShapeError("aggregate_diffusion: need matching W_out/W_in per step");
  auto [pf, pb] = transition_matrices(adj);
  if (transposed) {
    pf = transpose_values(pf);
    pb = transpose_values(pb);
  }
  Tensor acc = add(matmul(x, w.w_out[0]), matmul(x, w.w_in[0]));  // k=0: M⁰ = I
  Tensor tf = x, tb = x;
  for (std::size_t k = 1; k < w.steps(); ++k) {
    tf = matmul(pf, tf);
    tb = matmul(pb, tb);
    acc = add(acc, add(matmul(tf, w.w_out[k]), matmul(tb, w.w_in[k])));
  }
  return acc;
}

// Dispatcher for the parameterless kinds.
inline Tensor aggregate(AggregatorKind kind, const Tensor& x, const Tensor& adj) {
  switch (kind) {
    case AggregatorKind::weighted_mean: return aggregate_weighted_mean(x, adj);
    case AggregatorKind::mean: return aggregate_mean(x, adj);
    case AggregatorKind::max_pool: return aggregate_max(x, adj);
    case AggregatorKind::min_pool: return aggregate_min(x, adj);
    case AggregatorKind::diffusion:
      throw ValueError("aggregate: diffusion needs weights, call aggregate_diffusion");
  }
  throw ValueError("aggregate: invalid kind");
}

}  // namespace mogernn
