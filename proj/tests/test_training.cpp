#include "mogernn/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mogernn/synthetic.hpp"

using namespace mogernn;

namespace {

SensorGraph graph_from_synthetic(const SyntheticData& data, double kappa) {
  return SensorGraph::build(data.distances.copy_values(), std::nullopt, kappa,
                            std::vector<std::uint8_t>(data.dataset.n_sensors(), 1));
}

ModelConfig tiny_model_config(std::size_t p, std::size_t f, std::size_t h2) {
  ModelConfig m;
  m.p = p;
  m.f = f;
  m.h2 = h2;
  m.diffusion_steps = 2;
  m.top_k = 2;
  return m;
}

}  // namespace

TEST(WindowStarts, BoundaryExactlyOneWindow) {
  for (std::size_t s : {1u, 5u, 12u})
    EXPECT_EQ(window_starts(24, 12, 12, s).size(), 1u) << "stride " << s;
}

TEST(WindowStarts, PaperEnumeration) {
  // L=48, P=F=12, s=12: starts {1, 13, 25} in the paper's 1-based indexing.
  auto starts = window_starts(48, 12, 12, 12);
  ASSERT_EQ(starts.size(), 3u);
  EXPECT_EQ(starts[0], 0u);
  EXPECT_EQ(starts[1], 12u);
  EXPECT_EQ(starts[2], 24u);
}

TEST(WindowStarts, TooShortSeriesRejected) {
  EXPECT_THROW(window_starts(23, 12, 12, 1), DataError);
}

TEST(MakeWindows, UnitStrideOverlap) {
  const std::size_t n = 2, l = 12, p = 4, f = 2;
  Tensor series = Tensor::zeros({n, l});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < l; ++t) series.set(i, t, static_cast<double>(10 * i + t));
  auto windows = make_windows(series, std::vector<std::uint8_t>(n * l, 1), p, f, 1);
  ASSERT_EQ(windows.size(), l - p - f + 1);
  // consecutive windows share P−1 input columns
  for (std::size_t w = 1; w < windows.size(); ++w)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t + 1 < p; ++t)
        EXPECT_EQ(windows[w].input.at(i, t), windows[w - 1].input.at(i, t + 1));
  // targets follow inputs
  EXPECT_EQ(windows[0].target.at(0, 0), 4.0);
  EXPECT_EQ(windows[0].target.at(1, 1), 15.0);
}

TEST(RandomMask, ExactCountAndRowsZeroed) {
  Rng rng(1);
  const std::size_t n = 8, p = 5;
  std::vector<Window> batch(3);
  for (Window& w : batch) {
    w.input = Tensor::full({n, p}, 7.5);
    w.target = Tensor::full({n, 3}, 1.0);
    w.input_valid = Tensor::full({n, p}, 1.0);
    w.target_valid = Tensor::full({n, 3}, 1.0);
  }
  auto masked = apply_random_mask(batch, 0.25, rng);
  EXPECT_EQ(masked.size(), 2u);  // ⌊0.25·8⌋
  for (const Window& w : batch)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < p; ++t) {
        const bool is_masked = std::find(masked.begin(), masked.end(), i) != masked.end();
        EXPECT_EQ(w.input.at(i, t), is_masked ? 0.0 : 7.5);
      }
  // targets untouched
  for (const Window& w : batch)
    for (double v : w.target.data()) EXPECT_EQ(v, 1.0);
}

TEST(RandomMask, ZeroCountIsNoOp) {
  Rng rng(2);
  std::vector<Window> batch(1);
  batch[0].input = Tensor::full({3, 2}, 1.0);
  auto masked = apply_random_mask(batch, 0.25, rng);  // ⌊0.25·3⌋ = 0
  EXPECT_TRUE(masked.empty());
  for (double v : batch[0].input.data()) EXPECT_EQ(v, 1.0);
}

TEST(RandomMask, MonteCarloUniformity) {
  Rng rng(3);
  const std::size_t n = 20;
  std::vector<std::size_t> hits(n, 0);
  const int trials = 1000;
  for (int trial = 0; trial < trials; ++trial)
    for (std::size_t node : draw_mask_nodes(n, 0.25, rng)) ++hits[node];
  for (std::size_t i = 0; i < n; ++i) {
    const double freq = static_cast<double>(hits[i]) / trials;
    EXPECT_GE(freq, 0.20) << "node " << i;
    EXPECT_LE(freq, 0.30) << "node " << i;
  }
}

TEST(TeacherForcing, LinearDecaySchedule) {
  EXPECT_DOUBLE_EQ(teacher_forcing_rate(10, 10), 0.0);
  EXPECT_DOUBLE_EQ(teacher_forcing_rate(1, 10), 0.9);
  EXPECT_DOUBLE_EQ(teacher_forcing_rate(15, 10), 0.0);
  EXPECT_THROW(teacher_forcing_rate(0, 10), ValueError);
}

TEST(MaskedMse, PerfectPredictionIsZero) {
  Tensor p = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor v = Tensor::full({2, 2}, 1.0);
  EXPECT_DOUBLE_EQ(masked_mse_loss(p, p.copy_values(), v).value(), 0.0);
}

TEST(MaskedMse, ConstantErrorOfTwoGivesFour) {
  Tensor pred = Tensor::full({3, 4}, 52.0);
  Tensor target = Tensor::full({3, 4}, 50.0);
  Tensor v = Tensor::full({3, 4}, 1.0);
  EXPECT_DOUBLE_EQ(masked_mse_loss(pred, target, v).value(), 4.0);
}

TEST(MaskedMse, ValidityExclusionMatchesLoopOracle) {
  Rng rng(4);
  const std::size_t n = 4, f = 5;
  Tensor pred = Tensor::zeros({n, f});
  Tensor target = Tensor::zeros({n, f});
  Tensor valid = Tensor::zeros({n, f});
  for (auto& v : pred.mutable_data()) v = rng.uniform(-3, 3);
  for (auto& v : target.mutable_data()) v = rng.uniform(-3, 3);
  for (auto& v : valid.mutable_data()) v = rng.uniform01() < 0.5 ? 1.0 : 0.0;

  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (valid.data()[i] != 0.0) {
      const double d = pred.data()[i] - target.data()[i];
      sum += d * d;
      ++count;
    }
  ASSERT_GT(count, 0u);
  EXPECT_NEAR(masked_mse_loss(pred, target, valid).value(), sum / count, 1e-15);

  EXPECT_THROW(masked_mse_loss(pred, target, Tensor::zeros({n, f})), ValueError);
}

TEST(Adam, ZeroLearningRateLeavesParamsBitwiseUnchanged) {
  Rng rng(5);
  ModelConfig mcfg = tiny_model_config(3, 3, 4);
  MogernnModel model = MogernnModel::init(mcfg, rng);
  auto before = model.snapshot_values();

  SyntheticSpec spec;
  spec.nodes = 5;
  spec.days = 1;
  spec.seed = 6;
  auto data = generate_synthetic(spec);
  SensorGraph graph = graph_from_synthetic(data, 1500.0);
  Normalization norm = Normalization::fit(data.dataset.series, data.dataset.valid);
  Tensor z = Tensor::zeros(data.dataset.series.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z.mutable_data()[i] = norm.apply(data.dataset.series.data()[i]);
  auto windows = make_windows(z, data.dataset.valid, 3, 3, 12);

  AdamOptimizer opt(model.parameters(), 0.0);
  Tape tape;
  {
    Tape::Scope scope(tape);
    Rng step_rng(7);
    auto [loss, c] = batch_forward_loss(model, graph, {windows[0]}, {1}, 0.0, step_rng);
    backward(loss);
  }
  opt.step();
  auto after = model.snapshot_values();
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
}

TEST(Train, OneEpochOneBatchProducesOneLogEntry) {
  SyntheticSpec spec;
  spec.nodes = 6;
  spec.days = 1;
  spec.seed = 8;
  auto data = generate_synthetic(spec);
  auto [train_ds, test_ds] = split_train_test(data.dataset, 0.7);

  ModelConfig mcfg = tiny_model_config(4, 4, 4);
  TrainConfig tcfg;
  tcfg.p = tcfg.f = 4;
  tcfg.stride = 96;  // few windows
  tcfg.batch_size = 64;
  tcfg.epochs = 1;
  tcfg.seed = 9;
  SensorGraph graph = graph_from_synthetic(data, 1500.0);

  Rng init_rng(9);
  MogernnModel reference = MogernnModel::init(mcfg, init_rng);
  TrainResult result = train(mcfg, tcfg, train_ds, graph);
  ASSERT_EQ(result.log.size(), 1u);
  EXPECT_DOUBLE_EQ(result.log[0].tf_rate, teacher_forcing_rate(1, tcfg.tf_end_epoch));
  EXPECT_EQ(result.model.param_count(), reference.param_count());
}

TEST(Train, DeterministicGivenSeed) {
  SyntheticSpec spec;
  spec.nodes = 6;
  spec.days = 1;
  spec.seed = 10;
  auto data = generate_synthetic(spec);
  auto [train_ds, test_ds] = split_train_test(data.dataset, 0.7);
  SensorGraph graph = graph_from_synthetic(data, 1500.0);

  ModelConfig mcfg = tiny_model_config(4, 4, 4);
  TrainConfig tcfg;
  tcfg.p = tcfg.f = 4;
  tcfg.stride = 48;
  tcfg.batch_size = 4;
  tcfg.epochs = 3;
  tcfg.seed = 11;

  TrainResult a = train(mcfg, tcfg, train_ds, graph);
  TrainResult b = train(mcfg, tcfg, train_ds, graph);
  auto sa = a.model.snapshot_values();
  auto sb = b.model.snapshot_values();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i], sb[i]);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    EXPECT_EQ(a.log[i].val_loss, b.log[i].val_loss);
  }
}

TEST(Train, OverfitSmokeOnSingleTinyBatch) {
  // Smooth phase-shifted wave over an 8-ring: fully predictable, so a
  // 200-step run on one mini-batch must memorize it.
  const std::size_t n = 8, keep = 40;
  SpeedDataset short_ds;
  for (std::size_t i = 0; i < n; ++i) short_ds.sensor_ids.push_back("s" + std::to_string(i));
  short_ds.series = Tensor::zeros({n, keep});
  short_ds.valid.assign(n * keep, 1);
  const double pi = 3.14159265358979323846;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < keep; ++t)
      short_ds.series.set(i, t, 50.0 + 12.0 * std::sin(2.0 * pi * (static_cast<double>(t) +
                                                                   3.0 * static_cast<double>(i)) /
                                                       16.0));

  SyntheticSpec topo_spec;
  topo_spec.nodes = n;
  topo_spec.days = 1;
  auto topo = generate_synthetic(topo_spec);

  ModelConfig mcfg = tiny_model_config(4, 4, 8);
  TrainConfig tcfg;
  tcfg.p = tcfg.f = 4;
  tcfg.stride = 8;
  tcfg.batch_size = 64;
  tcfg.epochs = 200;
  tcfg.patience = 200;
  tcfg.learning_rate = 0.02;
  tcfg.tf_end_epoch = 50;
  tcfg.seed = 13;
  SensorGraph graph = SensorGraph::build(topo.distances.copy_values(), std::nullopt, 1500.0,
                                         std::vector<std::uint8_t>(n, 1));

  TrainResult result = train(mcfg, tcfg, short_ds, graph);
  ASSERT_GE(result.log.size(), 2u);
  const double initial = result.log.front().train_loss;
  double final_loss = result.log.back().train_loss;
  EXPECT_LT(final_loss, 0.05 * initial)
      << "initial " << initial << " final " << final_loss;
}

TEST(Train, ParamCountUnchangedAndLossPermutationInvariant) {
  SyntheticSpec spec;
  spec.nodes = 6;
  spec.days = 1;
  spec.seed = 14;
  auto data = generate_synthetic(spec);
  SensorGraph graph = graph_from_synthetic(data, 1500.0);
  Normalization norm = Normalization::fit(data.dataset.series, data.dataset.valid);
  Tensor z = Tensor::zeros(data.dataset.series.shape());
  for (std::size_t i = 0; i < z.size(); ++i)
    z.mutable_data()[i] = norm.apply(data.dataset.series.data()[i]);
  auto windows = make_windows(z, data.dataset.valid, 4, 4, 24);

  ModelConfig mcfg = tiny_model_config(4, 4, 5);
  Rng rng(15);
  MogernnModel model = MogernnModel::init(mcfg, rng);

  std::vector<std::size_t> masked = {1, 4};
  Rng r1(16);
  auto [loss, count] = batch_forward_loss(model, graph, {windows[0], windows[1]}, masked, 0.0, r1);

  // permute nodes consistently in data, adjacency and mask
  std::vector<std::size_t> pi = {3, 0, 5, 1, 4, 2};  // node i → position pi[i]
  auto permute_window = [&](const Window& w) {
    Window out;
    auto permute = [&](const Tensor& t) {
      Tensor r = Tensor::zeros(t.shape());
      for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t c = 0; c < t.cols(); ++c) r.set(pi[i], c, t.at(i, c));
      return r;
    };
    out.input = permute(w.input);
    out.target = permute(w.target);
    out.input_valid = permute(w.input_valid);
    out.target_valid = permute(w.target_valid);
    return out;
  };
  Tensor pdist = Tensor::zeros({6, 6});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) pdist.set(pi[i], pi[j], data.distances.at(i, j));
  SensorGraph pgraph = SensorGraph::build(pdist, graph.sigma, graph.kappa,
                                          std::vector<std::uint8_t>(6, 1));
  std::vector<std::size_t> pmasked;
  for (std::size_t node : masked) pmasked.push_back(pi[node]);
  std::sort(pmasked.begin(), pmasked.end());

  Rng r2(16);
  auto [ploss, pcount] = batch_forward_loss(
      model, pgraph, {permute_window(windows[0]), permute_window(windows[1])}, pmasked, 0.0, r2);
  EXPECT_EQ(count, pcount);
  EXPECT_NEAR(loss.value(), ploss.value(), 1e-12 * std::max(1.0, std::abs(loss.value())));
}

TEST(Train, TinyModelGradientMatchesFiniteDifferences) {
  SyntheticSpec spec;
  spec.nodes = 4;
  spec.days = 1;
  spec.seed = 17;
  auto data = generate_synthetic(spec);
  SensorGraph graph = graph_from_synthetic(data, 1500.0);
  Normalization norm = Normalization::fit(data.dataset.series, data.dataset.valid);
  Tensor z = Tensor::zeros(data.dataset.series.shape());
  for (std::size_t i = 0; i < z.size(); ++i)
    z.mutable_data()[i] = norm.apply(data.dataset.series.data()[i]);
  auto windows = make_windows(z, data.dataset.valid, 2, 2, 48);

  ModelConfig mcfg = tiny_model_config(2, 2, 3);
  Rng rng(18);
  MogernnModel model = MogernnModel::init(mcfg, rng);
  std::vector<std::size_t> masked = {2};
  std::vector<Window> batch = {windows[0], windows[1]};

  model.zero_grads();
  Tape tape;
  {
    Tape::Scope scope(tape);
    Rng r(19);
    auto [loss, c] = batch_forward_loss(model, graph, batch, masked, 0.0, r);
    backward(loss);
  }

  auto eval = [&] {
    Tape::Pause pause;
    Rng r(19);
    auto [loss, c] = batch_forward_loss(model, graph, batch, masked, 0.0, r);
    return loss.value();
  };
  const double eps = 1e-6;
  double worst = 0.0;
  model.visit_params([&](const std::string& name, Tensor& t) {
    if (!t.has_grad()) return;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double v = t.mutable_data()[i];
      t.mutable_data()[i] = v + eps;
      const double fp = eval();
      t.mutable_data()[i] = v - eps;
      const double fm = eval();
      t.mutable_data()[i] = v;
      const double fd = (fp - fm) / (2.0 * eps);
      const double rel = std::abs(t.grad()[i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-4) << name << "[" << i << "] ad=" << t.grad()[i] << " fd=" << fd;
    }
  });
  SUCCEED() << "worst relative error " << worst;
}

TEST(Predict, RunsOnLargerGraphWithSameParams) {
  Rng rng(20);
  ModelConfig mcfg = tiny_model_config(4, 3, 4);
  MogernnModel model = MogernnModel::init(mcfg, rng);
  Normalization norm{50.0, 10.0};

  for (std::size_t n : {15u, 20u, 30u}) {
    SyntheticSpec spec;
    spec.nodes = n;
    spec.days = 1;
    spec.seed = 21;
    auto data = generate_synthetic(spec);
    std::vector<std::uint8_t> observed(n, 1);
    observed[0] = 0;  // one virtual sensor
    SensorGraph graph = SensorGraph::build(data.distances.copy_values(), std::nullopt, 1500.0,
                                           observed);
    Tensor window = Tensor::zeros({n, 4});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < 4; ++t) window.set(i, t, data.dataset.series.at(i, t));
    Tensor valid = Tensor::full({n, 4}, 1.0);
    Tensor out = predict(model, norm, window, valid, graph);
    EXPECT_EQ(out.shape(), (Shape{n, 3u}));
    for (double v : out.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Train, DivergenceAbortsWithNumericError) {
  SyntheticSpec spec;
  spec.nodes = 5;
  spec.days = 1;
  spec.seed = 22;
  auto data = generate_synthetic(spec);
  auto [train_ds, test_ds] = split_train_test(data.dataset, 0.7);
  SensorGraph graph = graph_from_synthetic(data, 1500.0);

  ModelConfig mcfg = tiny_model_config(4, 4, 4);
  TrainConfig tcfg;
  tcfg.p = tcfg.f = 4;
  tcfg.stride = 12;
  tcfg.batch_size = 8;
  tcfg.epochs = 50;
  // The gated recurrence is bounded, so only an absurd step size overflows
  // the squared error to inf and trips the divergence guard.
  tcfg.learning_rate = 1e200;
  tcfg.seed = 23;
  EXPECT_THROW(train(mcfg, tcfg, train_ds, graph), NumericError);
}
