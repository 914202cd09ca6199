#include "mogernn/moge.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

using namespace mogernn;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t = Tensor::zeros({r, c});
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor ring_adjacency(std::size_t n) {
  Tensor a = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    a.set(i, (i + 1) % n, 0.8);
    a.set((i + 1) % n, i, 0.8);
    a.set(i, i, 1.0);
  }
  return a;
}

std::vector<AggregatorKind> all_kinds() {
  return {AggregatorKind::weighted_mean, AggregatorKind::mean, AggregatorKind::max_pool,
          AggregatorKind::min_pool, AggregatorKind::diffusion};
}

std::string serialize_params(MoGEParams& p) {
  std::ostringstream os;
  p.visit([&](const std::string& name, Tensor& t) {
    os << name << shape_str(t.shape());
    for (double v : t.data()) os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  });
  return os.str();
}

}  // namespace

TEST(ExpertForward, ZeroInputZeroBiasGivesActOfZero) {
  Rng rng(1);
  const std::size_t n = 4, p = 3, h2 = 5;
  Tensor x = Tensor::zeros({n, p});
  Tensor adj = mask_adjacency(ring_adjacency(n), std::vector<std::uint8_t>(n, 1));
  for (auto kind : {AggregatorKind::mean, AggregatorKind::max_pool, AggregatorKind::min_pool}) {
    ExpertParams e = ExpertParams::init(kind, p, h2, 2, rng);
    Tensor out = expert_forward(x, adj, e);
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(ExpertForward, IsolatedNodeOutputsActOfBias) {
  Rng rng(2);
  const std::size_t p = 3, h2 = 4;
  ExpertParams e = ExpertParams::init(AggregatorKind::mean, p, h2, 2, rng);
  e.b_out = Tensor::from({p}, {0.5, -0.25, 1.5});
  e.b_out.set_requires_grad(true);
  Tensor x = Tensor::from({1, p}, {1.0, 2.0, 3.0});
  Tensor adj = mask_adjacency(Tensor::from({1, 1}, {1.0}), {1});  // N=1, diag zeroed
  Tensor out = expert_forward(x, adj, e);
  EXPECT_DOUBLE_EQ(out.at(0, 0), 0.5);   // relu(0 + 0.5)
  EXPECT_DOUBLE_EQ(out.at(0, 1), 0.0);   // relu(-0.25)
  EXPECT_DOUBLE_EQ(out.at(0, 2), 1.5);
}

TEST(ExpertForward, PathGraphMeanExpertHandComputed) {
  // 3-node path 0–1–2, P = H₂ = 2, identity embed and output, zero bias.
  const std::size_t n = 3, p = 2;
  ExpertParams e;
  e.kind = AggregatorKind::mean;
  e.w1 = Tensor::from({2, 2}, {1, 0, 0, 1});
  e.w_out = Tensor::from({2, 2}, {1, 0, 0, 1});
  e.b_out = Tensor::zeros({2});
  Tensor x = Tensor::from({n, p}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  Tensor adj = Tensor::zeros({n, n});
  adj.set(0, 1, 1.0);
  adj.set(1, 0, 1.0);
  adj.set(1, 2, 1.0);
  adj.set(2, 1, 1.0);
  Tensor out = expert_forward(x, adj, e);
  // node 0 sees node 1; node 1 sees mean(node0, node2); node 2 sees node 1
  EXPECT_DOUBLE_EQ(out.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1), 4.0);
  EXPECT_DOUBLE_EQ(out.at(1, 0), 3.0);  // (1+5)/2
  EXPECT_DOUBLE_EQ(out.at(1, 1), 4.0);  // (2+6)/2
  EXPECT_DOUBLE_EQ(out.at(2, 0), 3.0);
  EXPECT_DOUBLE_EQ(out.at(2, 1), 4.0);
}

TEST(GateWeights, TopKEqualsExpertCountIsPlainSoftmax) {
  Rng rng(3);
  const std::size_t n = 4, p = 3, ne = 5;
  GateParams g = GateParams::init(p, 4, ne, rng);
  Tensor x = random_matrix(n, p, rng);
  Tensor full = gate_weights(x, ne, g);
  Tensor plain = softmax_rows(gate_scores(x, g));
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_NEAR(full.data()[i], plain.data()[i], 1e-15);
}

TEST(GateWeights, TopOneIsOneHot) {
  Rng rng(4);
  const std::size_t n = 6, p = 3, ne = 5;
  GateParams g = GateParams::init(p, 4, ne, rng);
  Tensor x = random_matrix(n, p, rng);
  Tensor w = gate_weights(x, 1, g);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t nonzero = 0;
    for (std::size_t e = 0; e < ne; ++e)
      if (w.at(i, e) != 0.0) {
        ++nonzero;
        EXPECT_DOUBLE_EQ(w.at(i, e), 1.0);
      }
    EXPECT_EQ(nonzero, 1u);
  }
}

TEST(GateWeights, DirectEvaluationOfScores) {
  // Zero first layer makes the scores equal b2 = [2,1,0,−1,3]; K = 2 keeps
  // experts {4,0} with softmax([3,2]) = [0.7311, 0.2689].
  GateParams g;
  g.w1 = Tensor::zeros({3, 2});
  g.b1 = Tensor::zeros({2});
  g.w2 = Tensor::zeros({2, 5});
  g.b2 = Tensor::from({5}, {2, 1, 0, -1, 3});
  Tensor x = Tensor::from({2, 3}, {0.3, -0.7, 1.1, 0.0, 0.0, 0.0});
  Tensor w = gate_weights(x, 2, g);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(w.at(i, 4), 0.7311, 1e-4);
    EXPECT_NEAR(w.at(i, 0), 0.2689, 1e-4);
    EXPECT_EQ(w.at(i, 1), 0.0);
    EXPECT_EQ(w.at(i, 2), 0.0);
    EXPECT_EQ(w.at(i, 3), 0.0);
  }
}

TEST(GateWeights, InvalidKRejected) {
  Rng rng(5);
  GateParams g = GateParams::init(3, 4, 5, rng);
  Tensor x = random_matrix(2, 3, rng);
  EXPECT_THROW(gate_weights(x, 0, g), ValueError);
  EXPECT_THROW(gate_weights(x, 6, g), ValueError);
}

TEST(MogeForward, AllObservedPassesInputThroughBitwise) {
  Rng rng(6);
  const std::size_t n = 5, p = 4;
  MoGEParams params = MoGEParams::init(all_kinds(), p, 6, 6, 2, 2, GatingMode::sparse_topk, rng);
  Tensor x = random_matrix(n, p, rng);
  Tensor out = moge_forward(x, ObservationMask::all_observed(n, p), ring_adjacency(n), params);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out.data()[i], x.data()[i]);
}

TEST(MogeForward, AllUnobservedEqualsMixture) {
  Rng rng(7);
  const std::size_t n = 4, p = 3;
  MoGEParams params = MoGEParams::init(all_kinds(), p, 5, 5, 2, 2, GatingMode::sparse_topk, rng);
  Tensor x = random_matrix(n, p, rng);
  Tensor adj = ring_adjacency(n);
  ObservationMask none = ObservationMask::from_tensor(Tensor::zeros({n, p}));
  Tensor out = moge_forward(x, none, adj, params);

  // Independent recombination: X₀ = 0, 𝒜′ fully masked, Σ_e w_e ⊙ X_e.
  Tensor x0 = Tensor::zeros({n, p});
  Tensor adj_masked = mask_adjacency(adj, std::vector<std::uint8_t>(n, 0));
  Tensor w = gate_weights(x0, params.top_k, params.gate);
  Tensor expected = Tensor::zeros({n, p});
  for (std::size_t e = 0; e < params.experts.size(); ++e) {
    Tensor xe = expert_forward(x0, adj_masked, params.experts[e]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < p; ++c)
        expected.set(i, c, expected.at(i, c) + w.at(i, e) * xe.at(i, c));
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    EXPECT_NEAR(out.data()[i], expected.data()[i], 1e-15);
}

TEST(MogeForward, MixedMaskMatchesRecombinationOracle) {
  Rng rng(8);
  const std::size_t n = 4, p = 3;
  MoGEParams params = MoGEParams::init(all_kinds(), p, 5, 5, 2, 2, GatingMode::sparse_topk, rng);
  Tensor x = random_matrix(n, p, rng);
  Tensor adj = ring_adjacency(n);
  Tensor m = Tensor::from({n, p}, {1, 1, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0});
  ObservationMask mask = ObservationMask::from_tensor(m.copy_values());
  Tensor out = moge_forward(x, mask, adj, params);

  Tensor x0 = Tensor::zeros({n, p});
  for (std::size_t i = 0; i < x0.size(); ++i) x0.mutable_data()[i] = x.data()[i] * m.data()[i];
  Tensor adj_masked = mask_adjacency(adj, mask.observed_rows());
  Tensor w = gate_weights(x0, params.top_k, params.gate);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < p; ++c) {
      double moge = 0.0;
      for (std::size_t e = 0; e < params.experts.size(); ++e)
        moge += w.at(i, e) * expert_forward(x0, adj_masked, params.experts[e]).at(i, c);
      const double expected = m.at(i, c) * x.at(i, c) + (1.0 - m.at(i, c)) * moge;
      EXPECT_NEAR(out.at(i, c), expected, 1e-12);
    }
}

TEST(MogeForward, GatingSparsityInvariant) {
  Rng rng(9);
  const std::size_t n = 7, p = 4, ne = 5;
  for (std::size_t k = 1; k <= ne; ++k) {
    GateParams g = GateParams::init(p, 4, ne, rng);
    Tensor x = random_matrix(n, p, rng);
    Tensor w = gate_weights(x, k, g);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t nonzero = 0;
      double s = 0.0;
      for (std::size_t e = 0; e < ne; ++e) {
        if (w.at(i, e) != 0.0) ++nonzero;
        s += w.at(i, e);
      }
      EXPECT_EQ(nonzero, k);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(MogeForward, UnobservedInputPerturbationIsolated) {
  Rng rng(10);
  const std::size_t n = 5, p = 4;
  MoGEParams params = MoGEParams::init(all_kinds(), p, 6, 6, 2, 2, GatingMode::sparse_topk, rng);
  Tensor adj = ring_adjacency(n);
  Tensor m = Tensor::full({n, p}, 1.0);
  for (std::size_t c = 0; c < p; ++c) m.set(2, c, 0.0);  // node 2 unobserved
  ObservationMask mask = ObservationMask::from_tensor(m);

  Tensor x = random_matrix(n, p, rng);
  Tensor x_perturbed = x.copy_values();
  for (std::size_t c = 0; c < p; ++c) x_perturbed.set(2, c, 123.0 + static_cast<double>(c));

  Tensor adj_masked = mask_adjacency(adj, mask.observed_rows());
  Tensor x0a = mul(x, mask.m);
  Tensor x0b = mul(x_perturbed, mask.m);
  for (const ExpertParams& e : params.experts) {
    Tensor a = expert_forward(x0a, adj_masked, e);
    Tensor b = expert_forward(x0b, adj_masked, e);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  }
  Tensor out_a = moge_forward(x, mask, adj, params);
  Tensor out_b = moge_forward(x_perturbed, mask, adj, params);
  for (std::size_t i = 0; i < out_a.size(); ++i) EXPECT_EQ(out_a.data()[i], out_b.data()[i]);
}

TEST(MogeForward, ParamsIndependentOfGraphSize) {
  auto init_and_run = [](std::size_t n) {
    Rng rng(77);
    MoGEParams params = MoGEParams::init(all_kinds(), 4, 6, 6, 2, 2, GatingMode::sparse_topk, rng);
    Rng data_rng(5);
    Tensor x = random_matrix(n, 4, data_rng);
    moge_forward(x, ObservationMask::all_observed(n, 4), ring_adjacency(n), params);
    return serialize_params(params);
  };
  EXPECT_EQ(init_and_run(10), init_and_run(50));
}

TEST(MogeForward, AverageGatingUsesUniformWeights) {
  Rng rng(11);
  const std::size_t n = 4, p = 3;
  MoGEParams params = MoGEParams::init(all_kinds(), p, 5, 5, 2, 2, GatingMode::average, rng);
  Tensor x = random_matrix(n, p, rng);
  Tensor adj = ring_adjacency(n);
  ObservationMask none = ObservationMask::from_tensor(Tensor::zeros({n, p}));
  Tensor out = moge_forward(x, none, adj, params);

  Tensor x0 = Tensor::zeros({n, p});
  Tensor adj_masked = mask_adjacency(adj, std::vector<std::uint8_t>(n, 0));
  Tensor expected = Tensor::zeros({n, p});
  for (const ExpertParams& e : params.experts) {
    Tensor xe = expert_forward(x0, adj_masked, e);
    for (std::size_t i = 0; i < expected.size(); ++i)
      expected.mutable_data()[i] += xe.data()[i] / static_cast<double>(params.experts.size());
  }
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out.data()[i], expected.data()[i], 1e-15);
}

TEST(MogeForward, GradientReachesGateAndExperts) {
  Rng rng(12);
  const std::size_t n = 5, p = 4;
  MoGEParams params = MoGEParams::init(all_kinds(), p, 6, 6, 2, 3, GatingMode::sparse_topk, rng);
  Tensor x = random_matrix(n, p, rng);
  Tensor m = Tensor::full({n, p}, 1.0);
  for (std::size_t c = 0; c < p; ++c) m.set(1, c, 0.0);
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor out = moge_forward(x, ObservationMask::from_tensor(m), ring_adjacency(n), params);
    backward(sum(mul(out, out)));
  }
  double gate_b2_norm = 0.0;
  for (double v : params.gate.b2.grad()) gate_b2_norm += v * v;
  EXPECT_GT(gate_b2_norm, 0.0);
  double gate_w2_norm = 0.0;
  for (double v : params.gate.w2.grad()) gate_w2_norm += v * v;
  EXPECT_GT(gate_w2_norm, 0.0);
  // at least the top-K selected experts must receive gradient
  std::size_t experts_with_grad = 0;
  for (const ExpertParams& e : params.experts) {
    double w1_norm = 0.0;
    if (e.w1.has_grad())
      for (double v : e.w1.grad()) w1_norm += v * v;
    if (w1_norm > 0.0) ++experts_with_grad;
  }
  EXPECT_GE(experts_with_grad, 2u);
}
