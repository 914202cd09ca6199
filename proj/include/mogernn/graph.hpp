#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "mogernn/common.hpp"
#include "mogernn/tensor.hpp"

// Weighted sensor graph: Gaussian-kernel adjacency over travel distances,
// observation masking for the first (MoGE) layer, and degree-normalized
// transition matrices for diffusion. Distances are directional; symmetric
// inputs are a special case. Everything here is plain data (no grad flow
// through the graph).

namespace mogernn {

inline double kInf = std::numeric_limits<double>::infinity();

// Population standard deviation of the finite, positive distance entries
// (the paper's "standard deviation of distance samples"; diagonal zeros and
// unconnected ∞ pairs are excluded).
inline double default_sigma(const Tensor& distances) {
  double sum = 0.0;
  std::size_t count = 0;
  for (double d : distances.data())
    if (std::isfinite(d) && d > 0.0) {
      sum += d;
      ++count;
    }
  if (count == 0) throw ValueError("default_sigma: no finite positive distances");
  const double mean = sum / static_cast<double>(count);
  double var = 0.0;
  for (double d : distances.data())
    if (std::isfinite(d) && d > 0.0) var += (d - mean) * (d - mean);
  return std::sqrt(var / static_cast<double>(count));
}

// 𝒜_ij = exp(−dist(i,j)/σ) if dist ≤ κ, else 0.
inline Tensor build_adjacency(const Tensor& distances, double sigma, double kappa) {
  if (distances.rank() != 2 || distances.rows() != distances.cols())
    throw ShapeError("build_adjacency: square matrix expected, got " + shape_str(distances.shape()));
  if (!(sigma > 0.0)) throw ValueError("build_adjacency: sigma must be > 0");
  if (!(kappa > 0.0)) throw ValueError("build_adjacency: kappa must be > 0");
  for (double d : distances.data())
    if (!(d >= 0.0)) throw ValueError("build_adjacency: distances must be nonnegative");
  const std::size_t n = distances.rows();
  Tensor adj = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n * n; ++i) {
    const double d = distances.data()[i];
    adj.mutable_data()[i] = d <= kappa ? std::exp(-d / sigma) : 0.0;
  }
  return adj;
}

// Eq. 4: zero the diagonal and every row whose source node is unobserved.
// Unobserved nodes still receive messages (columns untouched) — that is the
// extrapolation path.
inline Tensor mask_adjacency(const Tensor& adjacency, const std::vector<std::uint8_t>& observed) {
  if (adjacency.rank() != 2 || adjacency.rows() != adjacency.cols())
    throw ShapeError("mask_adjacency: square matrix expected, got " + shape_str(adjacency.shape()));
  const std::size_t n = adjacency.rows();
  if (observed.size() != n)
    throw ShapeError("mask_adjacency: observed has " + std::to_string(observed.size()) +
                     " flags for " + std::to_string(n) + " nodes");
  Tensor out = adjacency.copy_values();
  for (std::size_t i = 0; i < n; ++i) {
    if (!observed[i]) {
      for (std::size_t j = 0; j < n; ++j) out.set(i, j, 0.0);
    } else {
      out.set(i, i, 0.0);
    }
  }
  return out;
}

// forward = D_O⁻¹𝒜 (row-normalized by out-degree), backward = D_I⁻¹𝒜ᵀ.
// Zero-degree rows stay all-zero.
inline std::pair<Tensor, Tensor> transition_matrices(const Tensor& adjacency) {
  const std::size_t n = adjacency.rows();
  Tensor fwd = Tensor::zeros({n, n});
  Tensor bwd = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double out_deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) out_deg += adjacency.at(i, j);
    if (out_deg > 0.0)
      for (std::size_t j = 0; j < n; ++j) fwd.set(i, j, adjacency.at(i, j) / out_deg);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double in_deg = 0.0;
    for (std::size_t i = 0; i < n; ++i) in_deg += adjacency.at(i, j);
    if (in_deg > 0.0)
      for (std::size_t i = 0; i < n; ++i) bwd.set(j, i, adjacency.at(i, j) / in_deg);
  }
  return {std::move(fwd), std::move(bwd)};
}

// Node set with weighted adjacency, pairwise travel distances and per-node
// observation flags. Immutable after construction; shareable across workers.
struct SensorGraph {
  std::size_t n_nodes = 0;
  Tensor distances;  // N×N, ∞ when unconnected
  Tensor adjacency;  // N×N weights in [0,1]
  std::vector<std::uint8_t> observed;
  double sigma = 0.0;  // resolved build parameters, echoed into artifacts
  double kappa = 0.0;

  static SensorGraph build(Tensor distances, std::optional<double> sigma, double kappa,
                           std::vector<std::uint8_t> observed) {
    SensorGraph g;
    g.n_nodes = distances.rows();
    if (observed.size() != g.n_nodes)
      throw ShapeError("SensorGraph: observed flag count mismatch");
    g.sigma = sigma.has_value() ? *sigma : default_sigma(distances);
    g.kappa = kappa;
    g.adjacency = build_adjacency(distances, g.sigma, g.kappa);
    g.distances = std::move(distances);
    g.observed = std::move(observed);
    return g;
  }

  Tensor masked_adjacency() const { return mask_adjacency(adjacency, observed); }

  std::size_t observed_count() const {
    std::size_t c = 0;
    for (auto f : observed) c += f ? 1 : 0;
    return c;
  }

  // Subgraph over `keep` (order preserved). The adjacency is rebuilt from the
  // restricted distances; sigma is recomputed from them unless overridden.
  SensorGraph restrict(const std::vector<std::size_t>& keep,
                       std::optional<double> sigma_override = std::nullopt) const {
    const std::size_t m = keep.size();
    Tensor d = Tensor::zeros({m, m});
    std::vector<std::uint8_t> obs(m);
    for (std::size_t a = 0; a < m; ++a) {
      obs[a] = observed[keep[a]];
      for (std::size_t b = 0; b < m; ++b) d.set(a, b, distances.at(keep[a], keep[b]));
    }
    return build(std::move(d), sigma_override, kappa, std::move(obs));
  }
};

}  // namespace mogernn
