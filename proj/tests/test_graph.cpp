#include "mogernn/graph.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "mogernn/rng.hpp"

using namespace mogernn;

namespace {

Tensor random_distances(std::size_t n, Rng& rng) {
  Tensor d = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) d.set(i, j, rng.uniform(0.5, 10.0));
  return d;
}

}  // namespace

TEST(BuildAdjacency, ZeroDistanceGivesWeightOne) {
  Tensor d = Tensor::from({2, 2}, {0.0, 1.0, 1.0, 0.0});
  Tensor a = build_adjacency(d, 1.0, 5.0);
  EXPECT_DOUBLE_EQ(a.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(a.at(1, 1), 1.0);
}

TEST(BuildAdjacency, ThresholdCutoff) {
  Tensor d = Tensor::from({2, 2}, {0.0, 6.0, 6.0, 0.0});
  Tensor a = build_adjacency(d, 2.0, 5.0);  // dist = κ+1
  EXPECT_EQ(a.at(0, 1), 0.0);
  EXPECT_EQ(a.at(1, 0), 0.0);
}

TEST(BuildAdjacency, DirectEvaluation) {
  Tensor d = Tensor::from({2, 2}, {0.0, 2.0, 2.0, 0.0});
  Tensor a = build_adjacency(d, 2.0, 10.0);
  EXPECT_NEAR(a.at(0, 1), 0.3679, 1e-4);
}

TEST(BuildAdjacency, ParameterErrors) {
  Tensor d = Tensor::from({1, 1}, {0.0});
  EXPECT_THROW(build_adjacency(d, 0.0, 1.0), ValueError);
  EXPECT_THROW(build_adjacency(d, -1.0, 1.0), ValueError);
  EXPECT_THROW(build_adjacency(d, 1.0, 0.0), ValueError);
}

TEST(BuildAdjacency, MonotoneInDistanceWithinKappa) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    double d1 = rng.uniform(0.0, 8.0);
    double d2 = rng.uniform(0.0, 8.0);
    if (d1 == d2) continue;
    Tensor d = Tensor::from({2, 2}, {0.0, d1, d2, 0.0});
    Tensor a = build_adjacency(d, 3.0, 10.0);
    if (d1 < d2)
      EXPECT_GT(a.at(0, 1), a.at(1, 0));
    else
      EXPECT_LT(a.at(0, 1), a.at(1, 0));
  }
}

TEST(BuildAdjacency, DefaultSigmaIsPopulationStd) {
  // entries {2, 4}: mean 3, population variance ((1+1)/2) = 1
  Tensor d = Tensor::from({2, 2}, {0.0, 2.0, 4.0, 0.0});
  EXPECT_DOUBLE_EQ(default_sigma(d), 1.0);
}

TEST(BuildAdjacency, InfiniteDistanceUnconnected) {
  Tensor d = Tensor::from({2, 2}, {0.0, kInf, 3.0, 0.0});
  Tensor a = build_adjacency(d, 1.0, 5.0);
  EXPECT_EQ(a.at(0, 1), 0.0);
  EXPECT_GT(a.at(1, 0), 0.0);
}

TEST(MaskAdjacency, AllObservedZeroDiagIsIdentityOp) {
  Tensor a = Tensor::from({2, 2}, {0.0, 0.5, 0.25, 0.0});
  Tensor m = mask_adjacency(a, {1, 1});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(m.data()[i], a.data()[i]);
}

TEST(MaskAdjacency, UnobservedRowZeroed) {
  Tensor a = Tensor::from({3, 3}, {1.0, 0.2, 0.3, 0.4, 1.0, 0.6, 0.7, 0.8, 1.0});
  Tensor m = mask_adjacency(a, {1, 0, 1});
  // row 1 all zero
  EXPECT_EQ(m.at(1, 0), 0.0);
  EXPECT_EQ(m.at(1, 1), 0.0);
  EXPECT_EQ(m.at(1, 2), 0.0);
  // other rows: unchanged except zeroed diagonal
  EXPECT_EQ(m.at(0, 0), 0.0);
  EXPECT_EQ(m.at(0, 1), 0.2);
  EXPECT_EQ(m.at(0, 2), 0.3);
  EXPECT_EQ(m.at(2, 0), 0.7);
  EXPECT_EQ(m.at(2, 1), 0.8);
  EXPECT_EQ(m.at(2, 2), 0.0);
}

TEST(MaskAdjacency, EntrywiseOracleOnRandomGraph) {
  Rng rng(9);
  const std::size_t n = 5;
  Tensor a = Tensor::zeros({n, n});
  for (auto& v : a.mutable_data()) v = rng.uniform(0.0, 1.0);
  std::vector<std::uint8_t> observed = {1, 0, 1, 0, 1};
  Tensor m = mask_adjacency(a, observed);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double expected = (i == j || !observed[i]) ? 0.0 : a.at(i, j);
      EXPECT_EQ(m.at(i, j), expected) << i << "," << j;
    }
}

TEST(MaskAdjacency, Idempotent) {
  Rng rng(10);
  Tensor a = Tensor::zeros({6, 6});
  for (auto& v : a.mutable_data()) v = rng.uniform(0.0, 1.0);
  std::vector<std::uint8_t> observed = {1, 0, 1, 1, 0, 1};
  Tensor once = mask_adjacency(a, observed);
  Tensor twice = mask_adjacency(once, observed);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(once.data()[i], twice.data()[i]);
}

TEST(TransitionMatrices, ZeroOutDegreeRowStaysZero) {
  Tensor a = Tensor::from({2, 2}, {0.0, 0.0, 1.0, 0.0});
  auto [fwd, bwd] = transition_matrices(a);
  EXPECT_EQ(fwd.at(0, 0), 0.0);
  EXPECT_EQ(fwd.at(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(fwd.at(1, 0), 1.0);
}

TEST(TransitionMatrices, UnitDegrees) {
  Tensor a = Tensor::from({2, 2}, {0.0, 1.0, 1.0, 0.0});
  auto [fwd, bwd] = transition_matrices(a);
  EXPECT_DOUBLE_EQ(fwd.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(fwd.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(bwd.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(bwd.at(1, 0), 1.0);
}

TEST(TransitionMatrices, RowsSumToOneOrZero) {
  Rng rng(12);
  Tensor a = Tensor::zeros({4, 4});
  for (auto& v : a.mutable_data()) v = rng.uniform(0.0, 1.0);
  // force one isolated row
  for (std::size_t j = 0; j < 4; ++j) a.set(2, j, 0.0);
  auto [fwd, bwd] = transition_matrices(a);
  for (const Tensor* m : {&fwd, &bwd})
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) s += m->at(i, j);
      if (s != 0.0) EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(SensorGraph, BuildAndRestrict) {
  Rng rng(13);
  Tensor d = random_distances(5, rng);
  SensorGraph g = SensorGraph::build(d.copy_values(), std::nullopt, 20.0, {1, 1, 0, 1, 1});
  EXPECT_EQ(g.n_nodes, 5u);
  EXPECT_EQ(g.observed_count(), 4u);
  EXPECT_GT(g.sigma, 0.0);

  SensorGraph sub = g.restrict({0, 2, 4});
  EXPECT_EQ(sub.n_nodes, 3u);
  EXPECT_EQ(sub.distances.at(0, 1), d.at(0, 2));
  EXPECT_EQ(sub.observed[1], 0);
}
