#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mogernn/data.hpp"
#include "mogernn/model.hpp"

// The inductive training procedure end to end: sliding windows, per-batch
// random node masking (the simulated unobserved locations), scheduled
// sampling with linear decay, masked MSE, Adam steps and early stopping.

namespace mogernn {

struct TrainConfig {
  std::size_t p = 12;
  std::size_t f = 12;
  std::size_t stride = 12;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  double learning_rate = 1e-3;
  double mask_rate = 0.25;
  std::size_t tf_end_epoch = 30;  // E_m
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  double val_split = 0.0;  // 0 → validation set equals the training set

  void validate() const {
    if (p == 0 || f == 0 || stride == 0 || batch_size == 0 || epochs == 0 || tf_end_epoch == 0 ||
        patience == 0)
      throw ValueError("TrainConfig: P, F, stride, batch, epochs, tf_end_epoch, patience must be positive");
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ValueError("TrainConfig: mask rate must be in (0,1)");
    if (!(val_split >= 0.0 && val_split < 1.0)) throw ValueError("TrainConfig: val_split must be in [0,1)");
  }
};

// One (history, future) pair cut from the series, with original-missing
// validity carried along. Values are already normalized and zero-filled.
struct Window {
  Tensor input;         // Ñ×P
  Tensor target;        // Ñ×F
  Tensor input_valid;   // Ñ×P binary
  Tensor target_valid;  // Ñ×F binary

  // Tensors are shared-value handles; cloning is required before in-place
  // mutation such as apply_random_mask.
  Window clone() const {
    return Window{input.copy_values(), target.copy_values(), input_valid.copy_values(),
                  target_valid.copy_values()};
  }
};

// 0-based window starts {0, s, 2s, …} with start + P + F ≤ L (the paper's
// 1-based i = 1, 1+s, …, L−P−F+1).
inline std::vector<std::size_t> window_starts(std::size_t length, std::size_t p, std::size_t f,
                                              std::size_t stride) {
  if (stride == 0) throw ValueError("window_starts: stride must be positive");
  if (length < p + f)
    throw DataError("window_starts: series length " + std::to_string(length) +
                    " is shorter than P+F = " + std::to_string(p + f) + " (empty dataset)");
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i + p + f <= length; i += stride) starts.push_back(i);
  return starts;
}

inline std::vector<Window> make_windows(const Tensor& series, const std::vector<std::uint8_t>& valid,
                                        std::size_t p, std::size_t f, std::size_t stride) {
  const std::size_t n = series.rows(), l = series.cols();
  std::vector<Window> windows;
  for (std::size_t start : window_starts(l, p, f, stride)) {
    Window w;
    w.input = Tensor::zeros({n, p});
    w.target = Tensor::zeros({n, f});
    w.input_valid = Tensor::zeros({n, p});
    w.target_valid = Tensor::zeros({n, f});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < p; ++t) {
        w.input.set(i, t, series.at(i, start + t));
        w.input_valid.set(i, t, valid[i * l + start + t] ? 1.0 : 0.0);
      }
      for (std::size_t t = 0; t < f; ++t) {
        w.target.set(i, t, series.at(i, start + p + t));
        w.target_valid.set(i, t, valid[i * l + start + p + t] ? 1.0 : 0.0);
      }
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

// Draws ⌊m·Ñ⌋ nodes uniformly without replacement. ⌊m·Ñ⌋ = 0 is a warned
// no-op (the caller decides where the warning goes).
inline std::vector<std::size_t> draw_mask_nodes(std::size_t n_nodes, double mask_rate, Rng& rng) {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ValueError("mask rate must be in (0,1)");
  const std::size_t count = static_cast<std::size_t>(std::floor(mask_rate * static_cast<double>(n_nodes)));
  if (count == 0) return {};
  return rng.sample_without_replacement(n_nodes, count);
}

// Zeroes the masked nodes' input rows in every window of the batch; targets
// are untouched. Returns the recorded subset.
inline std::vector<std::size_t> apply_random_mask(std::vector<Window>& batch, double mask_rate,
                                                  Rng& rng) {
  if (batch.empty()) throw ValueError("apply_random_mask: empty batch");
  const std::size_t n = batch.front().input.rows();
  auto masked = draw_mask_nodes(n, mask_rate, rng);
  for (Window& w : batch)
    for (std::size_t node : masked)
      for (std::size_t t = 0; t < w.input.cols(); ++t) w.input.set(node, t, 0.0);
  return masked;
}

// Alg. 1 line 12: r = max(1 − epoch/E_m, 0), epochs counted from 1.
inline double teacher_forcing_rate(std::size_t epoch, std::size_t tf_end_epoch) {
  if (epoch == 0) throw ValueError("teacher_forcing_rate: epochs are counted from 1");
  return std::max(1.0 - static_cast<double>(epoch) / static_cast<double>(tf_end_epoch), 0.0);
}

inline Tensor square(const Tensor& x) { return mul(x, x); }

inline double count_nonzero(const Tensor& t) {
  double c = 0.0;
  for (double v : t.data()) c += v != 0.0 ? 1.0 : 0.0;
  return c;
}

// Mean of (pred−target)² over entries with valid = 1, all nodes included.
inline Tensor masked_mse_loss(const Tensor& pred, const Tensor& target, const Tensor& valid) {
  if (pred.shape() != target.shape() || pred.shape() != valid.shape())
    throw ShapeError("masked_mse_loss: shapes " + shape_str(pred.shape()) + ", " +
                     shape_str(target.shape()) + ", " + shape_str(valid.shape()));
  const double count = count_nonzero(valid);
  if (count == 0.0) throw ValueError("masked_mse_loss: no valid entries");
  return scale(sum(mul(square(sub(pred, target)), valid)), 1.0 / count);
}

// Observation mask for one training window: valid input entries of
// non-masked nodes.
inline ObservationMask window_observation_mask(const Window& w,
                                               const std::vector<std::size_t>& masked) {
  Tensor m = w.input_valid.copy_values();
  for (std::size_t node : masked)
    for (std::size_t t = 0; t < m.cols(); ++t) m.set(node, t, 0.0);
  return ObservationMask::from_tensor(std::move(m));
}

// Forward + masked-MSE over one mini-batch; shared by the training loop,
// validation and the gradient-check tests.
inline std::pair<Tensor, double> batch_forward_loss(const MogernnModel& model,
                                                    const SensorGraph& graph,
                                                    const std::vector<Window>& batch,
                                                    const std::vector<std::size_t>& masked,
                                                    double tf_rate, Rng& rng) {
  Tensor sse;
  bool first = true;
  double count = 0.0;
  for (const Window& w : batch) {
    ObservationMask mask = window_observation_mask(w, masked);
    Tensor pred = model.forward(w.input, mask, graph, tf_rate, &w.target, rng);
    Tensor piece = sum(mul(square(sub(pred, w.target)), w.target_valid));
    count += count_nonzero(w.target_valid);
    sse = first ? piece : add(sse, piece);
    first = false;
  }
  if (count == 0.0) throw ValueError("batch_forward_loss: no valid target entries");
  return {scale(sse, 1.0 / count), count};
}

// Adaptive moment estimation. With η = 0 the parameter values are left
// bitwise untouched while the moment state still advances.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Tensor& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) continue;  // parameter not touched by this loss
      auto g = p.grad();
      auto data = p.mutable_data();
      for (std::size_t j = 0; j < data.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
        if (lr_ != 0.0)
          data[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
      }
    }
  }

  void zero_grads() {
    for (Tensor& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor> params_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double tf_rate = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  MogernnModel model;
  Normalization norm;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<std::string> warnings;
};

// Alg. 1 over an already node-restricted training dataset and its graph.
// Per-epoch shuffle, batch, mask, forward (MoGE → encode → decode with the
// epoch's tf_rate), masked MSE, Adam step; early stop on the validation loss
// (validation = training set unless val_split holds out the tail windows;
// validation runs with tf_rate 0 and fixed-seed masks so epochs compare).
inline TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const SpeedDataset& data, const SensorGraph& graph,
                         const std::function<void(const EpochLog&)>& on_epoch = nullptr) {
  tcfg.validate();
  const std::size_t n = data.n_sensors();
  if (graph.n_nodes != n)
    throw ShapeError("train: graph has " + std::to_string(graph.n_nodes) + " nodes, data has " +
                     std::to_string(n));
  if (mcfg.p != tcfg.p || mcfg.f != tcfg.f)
    throw ValueError("train: model and train configs disagree on P/F");

  TrainResult result;
  result.norm = Normalization::fit(data.series, data.valid);
  Tensor z = Tensor::zeros(data.series.shape());
  for (std::size_t i = 0; i < data.series.size(); ++i)
    z.mutable_data()[i] = data.valid[i] ? result.norm.apply(data.series.data()[i]) : 0.0;

  std::vector<Window> all = make_windows(z, data.valid, tcfg.p, tcfg.f, tcfg.stride);
  std::vector<Window> train_windows, val_windows;
  if (tcfg.val_split > 0.0) {
    const std::size_t n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(tcfg.val_split * static_cast<double>(all.size()))));
    if (n_val >= all.size()) throw ValueError("train: val_split leaves no training windows");
    train_windows.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_val));
    val_windows.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
  } else {
    train_windows = all;
    val_windows = all;  // §5.1: validation set kept the same as the training set
  }

  Rng rng(tcfg.seed);
  MogernnModel model = MogernnModel::init(mcfg, rng);
  AdamOptimizer opt(model.parameters(), tcfg.learning_rate);

  if (static_cast<std::size_t>(std::floor(tcfg.mask_rate * static_cast<double>(n))) == 0)
    result.warnings.push_back("mask rate " + std::to_string(tcfg.mask_rate) + " selects 0 of " +
                              std::to_string(n) + " nodes; masking is a no-op");

  auto validation_loss = [&](const MogernnModel& m) {
    Tape::Pause pause;
    Rng val_rng(tcfg.seed ^ 0x9e3779b97f4a7c15ull);
    Rng decode_rng(0);  // unused at tf_rate 0
    double sse = 0.0, count = 0.0;
    for (std::size_t b = 0; b < val_windows.size(); b += tcfg.batch_size) {
      const std::size_t end = std::min(val_windows.size(), b + tcfg.batch_size);
      std::vector<Window> batch(val_windows.begin() + static_cast<std::ptrdiff_t>(b),
                                val_windows.begin() + static_cast<std::ptrdiff_t>(end));
      auto masked = draw_mask_nodes(n, tcfg.mask_rate, val_rng);
      auto [loss, c] = batch_forward_loss(m, graph, batch, masked, 0.0, decode_rng);
      sse += loss.value() * c;
      count += c;
    }
    return sse / count;
  };

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_snapshot = model.snapshot_values();
  std::size_t best_epoch = 0, stale = 0;

  std::vector<std::size_t> order(train_windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const double tf = teacher_forcing_rate(epoch, tcfg.tf_end_epoch);
    rng.shuffle(order);
    double epoch_sse = 0.0, epoch_count = 0.0;
    for (std::size_t b = 0; b < order.size(); b += tcfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + tcfg.batch_size);
      std::vector<Window> batch;
      batch.reserve(end - b);
      for (std::size_t q = b; q < end; ++q) batch.push_back(train_windows[order[q]].clone());
      auto masked = apply_random_mask(batch, tcfg.mask_rate, rng);

      Tape tape;
      Tape::Scope scope(tape);
      auto [loss, c] = batch_forward_loss(model, graph, batch, masked, tf, rng);
      const double loss_value = loss.value();
      if (!std::isfinite(loss_value))
        throw NumericError("train: loss diverged (non-finite) at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b / tcfg.batch_size + 1));
      backward(loss);
      opt.step();
      opt.zero_grads();
      epoch_sse += loss_value * c;
      epoch_count += c;
    }

    EpochLog log;
    log.epoch = epoch;
    log.tf_rate = tf;
    log.train_loss = epoch_sse / epoch_count;
    log.val_loss = validation_loss(model);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (log.val_loss < best_val) {
      best_val = log.val_loss;
      best_snapshot = model.snapshot_values();
      best_epoch = epoch;
      stale = 0;
    } else if (++stale >= tcfg.patience) {
      break;
    }
  }

  model.restore_values(best_snapshot);
  result.model = std::move(model);
  result.best_epoch = best_epoch;
  result.best_val_loss = best_val;
  return result;
}

// Eq. 14 inference: multi-step forecast over possibly different node
// sets/roles than training. Unobserved or invalid entries are zero-filled
// after normalization; no masking, no teacher.
inline Tensor predict(const MogernnModel& model, const Normalization& norm,
                      const Tensor& raw_window, const Tensor& window_valid,
                      const SensorGraph& graph) {
  if (raw_window.rank() != 2 || raw_window.cols() != model.cfg.p)
    throw ShapeError("predict: window " + shape_str(raw_window.shape()) + " vs P=" +
                     std::to_string(model.cfg.p));
  if (raw_window.rows() != graph.n_nodes)
    throw ShapeError("predict: window rows vs graph nodes mismatch");
  Tape::Pause pause;
  const std::size_t n = raw_window.rows(), p = raw_window.cols();
  Tensor z = Tensor::zeros({n, p});
  Tensor m = Tensor::zeros({n, p});
  for (std::size_t i = 0; i < n; ++i) {
    const bool obs = graph.observed[i] != 0;
    for (std::size_t t = 0; t < p; ++t) {
      const bool ok = obs && window_valid.at(i, t) != 0.0;
      m.set(i, t, ok ? 1.0 : 0.0);
      z.set(i, t, ok ? norm.apply(raw_window.at(i, t)) : 0.0);
    }
  }
  Rng unused(0);
  Tensor out = model.forward(z, ObservationMask::from_tensor(std::move(m)), graph, 0.0, nullptr,
                             unused);
  Tensor raw = Tensor::zeros(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    raw.mutable_data()[i] = norm.invert(out.data()[i]);
  return raw;
}

}  // namespace mogernn
