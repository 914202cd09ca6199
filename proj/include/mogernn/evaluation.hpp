#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mogernn/data.hpp"
#include "mogernn/training.hpp"

// Metrics, the sensor-role taxonomy, the dynamic-sensing scenario runner and
// the reference baselines. Evaluation is read-only over trained parameters.

namespace mogernn {

// ----- roles -----

enum class Role { AAS, VS, FS, NAS };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::AAS: return "AAS";
    case Role::VS: return "VS";
    case Role::FS: return "FS";
    case Role::NAS: return "NAS";
  }
  throw ValueError("role_name: invalid role");
}

inline Role parse_role(const std::string& s) {
  if (s == "AAS") return Role::AAS;
  if (s == "VS") return Role::VS;
  if (s == "FS") return Role::FS;
  if (s == "NAS") return Role::NAS;
  throw ValueError("unknown role: " + s);
}

// Partition of the node set. Training observes AAS∪FS (VS and NAS absent);
// testing observes AAS∪NAS and evaluates VS and FS as unobserved.
struct RoleAssignment {
  std::vector<Role> roles;
  std::uint64_t seed = 0;

  std::size_t n_nodes() const { return roles.size(); }

  std::size_t count(Role r) const {
    std::size_t c = 0;
    for (Role x : roles) c += x == r ? 1 : 0;
    return c;
  }

  std::vector<std::size_t> indices_of(Role r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == r) out.push_back(i);
    return out;
  }

  // Nodes present (and observed) during training.
  std::vector<std::size_t> training_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == Role::AAS || roles[i] == Role::FS) out.push_back(i);
    return out;
  }

  // Observation flags over the full node set at test time.
  std::vector<std::uint8_t> test_observed() const {
    std::vector<std::uint8_t> obs(roles.size(), 0);
    for (std::size_t i = 0; i < roles.size(); ++i)
      obs[i] = (roles[i] == Role::AAS || roles[i] == Role::NAS) ? 1 : 0;
    return obs;
  }
};

// Uniform random partition with fixed counts (AAS, VS, FS, NAS), seeded.
inline RoleAssignment assign_roles(std::size_t n_nodes, std::array<std::size_t, 4> counts,
                                   std::uint64_t seed) {
  if (counts[0] + counts[1] + counts[2] + counts[3] != n_nodes)
    throw ValueError("assign_roles: counts sum to " +
                     std::to_string(counts[0] + counts[1] + counts[2] + counts[3]) + ", expected " +
                     std::to_string(n_nodes));
  std::vector<std::size_t> order(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  RoleAssignment ra;
  ra.seed = seed;
  ra.roles.assign(n_nodes, Role::AAS);
  std::size_t pos = 0;
  const Role role_order[4] = {Role::AAS, Role::VS, Role::FS, Role::NAS};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < counts[r]; ++k) ra.roles[order[pos++]] = role_order[r];
  return ra;
}

// ----- metrics -----

struct Metrics {
  double mape = 0.0;  // percent
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;       // entries in MAE/RMSE
  std::size_t mape_count = 0;  // entries with |target| above the guard
};

inline constexpr double kMapeEps = 1e-3;

class MetricAccumulator {
 public:
  void add(double pred, double target) {
    const double err = pred - target;
    abs_sum_ += std::abs(err);
    sq_sum_ += err * err;
    ++count_;
    if (std::abs(target) > kMapeEps) {
      ape_sum_ += std::abs(err) / std::abs(target);
      ++mape_count_;
    }
  }

  std::size_t count() const { return count_; }

  Metrics finalize() const {
    if (count_ == 0) throw ValueError("metrics: no valid entries in group");
    Metrics m;
    m.count = count_;
    m.mape_count = mape_count_;
    m.mae = abs_sum_ / static_cast<double>(count_);
    m.rmse = std::sqrt(sq_sum_ / static_cast<double>(count_));
    m.mape = mape_count_ ? 100.0 * ape_sum_ / static_cast<double>(mape_count_) : 0.0;
    return m;
  }

 private:
  double abs_sum_ = 0.0, sq_sum_ = 0.0, ape_sum_ = 0.0;
  std::size_t count_ = 0, mape_count_ = 0;
};

// MAPE/MAE/RMSE over valid entries; invalid entries never contribute.
inline Metrics compute_metrics(const Tensor& pred, const Tensor& target, const Tensor& valid) {
  if (pred.shape() != target.shape() || pred.shape() != valid.shape())
    throw ShapeError("compute_metrics: shape mismatch");
  MetricAccumulator acc;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (valid.data()[i] != 0.0) acc.add(pred.data()[i], target.data()[i]);
  return acc.finalize();
}

struct MetricRow {
  std::string role;
  std::string horizon;  // "step_<k>", "15min", "30min", "60min", "all"
  Metrics metrics;
};

struct MetricsReport {
  std::vector<MetricRow> rows;

  const MetricRow* find(const std::string& role, const std::string& horizon) const {
    for (const auto& r : rows)
      if (r.role == role && r.horizon == horizon) return &r;
    return nullptr;
  }
};

// Raw per-window predictions kept for reports and cross-checks.
struct EvalOutputs {
  std::vector<Tensor> preds;    // per window, N×F raw units
  std::vector<Tensor> targets;  // per window, N×F
  std::vector<Tensor> valids;   // per window, N×F binary
  std::vector<std::size_t> window_starts;
};

// Assemble per-role rows: each step, the 15/30/60-minute buckets (the steps
// at those lead times when the sampling frequency allows) and an "all" pool.
inline MetricsReport metrics_report(const EvalOutputs& out, const RoleAssignment& roles,
                                    double frequency_min) {
  MetricsReport report;
  if (out.preds.empty()) throw ValueError("metrics_report: no evaluation windows");
  const std::size_t f = out.preds.front().cols();
  const Role kinds[4] = {Role::AAS, Role::VS, Role::FS, Role::NAS};
  for (Role role : kinds) {
    auto nodes = roles.indices_of(role);
    if (nodes.empty()) continue;
    std::vector<MetricAccumulator> per_step(f);
    MetricAccumulator all;
    for (std::size_t w = 0; w < out.preds.size(); ++w)
      for (std::size_t node : nodes)
        for (std::size_t s = 0; s < f; ++s)
          if (out.valids[w].at(node, s) != 0.0) {
            per_step[s].add(out.preds[w].at(node, s), out.targets[w].at(node, s));
            all.add(out.preds[w].at(node, s), out.targets[w].at(node, s));
          }
    for (std::size_t s = 0; s < f; ++s) {
      if (per_step[s].count() == 0) continue;
      report.rows.push_back({role_name(role), "step_" + std::to_string(s + 1), per_step[s].finalize()});
      const double minutes = frequency_min * static_cast<double>(s + 1);
      for (double bucket : {15.0, 30.0, 60.0})
        if (minutes == bucket)
          report.rows.push_back({role_name(role),
                                 std::to_string(static_cast<int>(bucket)) + "min",
                                 per_step[s].finalize()});
    }
    if (all.count() > 0) report.rows.push_back({role_name(role), "all", all.finalize()});
  }
  return report;
}

// ----- model evaluation over a test series -----

// Slides windows over the test series; inputs are observed (per graph flags)
// and valid entries only, everything else zero-filled by predict().
inline EvalOutputs evaluate_model(const MogernnModel& model, const Normalization& norm,
                                  const SpeedDataset& test_data, const SensorGraph& graph,
                                  std::size_t stride) {
  const std::size_t n = test_data.n_sensors(), l = test_data.length();
  const std::size_t p = model.cfg.p, f = model.cfg.f;
  EvalOutputs out;
  for (std::size_t start : window_starts(l, p, f, stride)) {
    Tensor input = Tensor::zeros({n, p});
    Tensor input_valid = Tensor::zeros({n, p});
    Tensor target = Tensor::zeros({n, f});
    Tensor target_valid = Tensor::zeros({n, f});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < p; ++t) {
        input.set(i, t, test_data.series.at(i, start + t));
        input_valid.set(i, t, test_data.is_valid(i, start + t) ? 1.0 : 0.0);
      }
      for (std::size_t t = 0; t < f; ++t) {
        target.set(i, t, test_data.series.at(i, start + p + t));
        target_valid.set(i, t, test_data.is_valid(i, start + p + t) ? 1.0 : 0.0);
      }
    }
    out.preds.push_back(predict(model, norm, input, input_valid, graph));
    out.targets.push_back(std::move(target));
    out.valids.push_back(std::move(target_valid));
    out.window_starts.push_back(start);
  }
  return out;
}

// §5.3 protocol: apply a model trained under role-set A directly to role-set
// B. The inference graph spans all nodes of B; AAS and NAS feed observations,
// VS and FS inputs are zeroed; no retraining happens here.
inline MetricsReport run_dynamic_scenario(const MogernnModel& model, const Normalization& norm,
                                          const SpeedDataset& test_data, const Tensor& distances,
                                          const RoleAssignment& roles, double kappa,
                                          std::optional<double> sigma, std::size_t stride,
                                          EvalOutputs* dump = nullptr) {
  if (roles.n_nodes() != test_data.n_sensors())
    throw ShapeError("run_dynamic_scenario: roles cover " + std::to_string(roles.n_nodes()) +
                     " nodes, data has " + std::to_string(test_data.n_sensors()));
  SensorGraph graph = SensorGraph::build(distances.copy_values(), sigma, kappa, roles.test_observed());
  EvalOutputs out = evaluate_model(model, norm, test_data, graph, stride);
  MetricsReport report = metrics_report(out, roles, test_data.frequency_min);
  if (dump) *dump = std::move(out);
  return report;
}

// §5.4: D_v2a = mean over VS nodes of the travel distance to the nearest AAS.
inline double vs_to_aas_distance(const RoleAssignment& roles, const Tensor& distances) {
  auto vs = roles.indices_of(Role::VS);
  auto aas = roles.indices_of(Role::AAS);
  if (vs.empty()) throw ValueError("vs_to_aas_distance: no VS nodes");
  if (aas.empty()) throw ValueError("vs_to_aas_distance: need at least one AAS node");
  double total = 0.0;
  for (std::size_t i : vs) {
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j : aas)
      if (j != i) dmin = std::min(dmin, distances.at(i, j));
    total += dmin;
  }
  return total / static_cast<double>(vs.size());
}

// ----- baselines -----

namespace detail {

// History fill: observed nodes keep their own valid entries; each unobserved
// node takes the per-step mean of its k nearest observed neighbours (by
// travel distance, ties to the lower index). Second tensor flags which
// entries ended up defined.
inline std::pair<Tensor, Tensor> knn_fill(const Tensor& window, const Tensor& window_valid,
                                          const std::vector<std::uint8_t>& observed,
                                          const Tensor& distances, std::size_t k) {
  const std::size_t n = window.rows(), p = window.cols();
  std::vector<std::size_t> obs_nodes;
  for (std::size_t i = 0; i < n; ++i)
    if (observed[i]) obs_nodes.push_back(i);
  if (k < 1) throw ValueError("knn_fill: k must be >= 1");
  if (obs_nodes.size() < k)
    throw ValueError("knn_fill: only " + std::to_string(obs_nodes.size()) +
                     " observed nodes for k=" + std::to_string(k));
  Tensor filled = Tensor::zeros({n, p});
  Tensor defined = Tensor::zeros({n, p});
  for (std::size_t i = 0; i < n; ++i) {
    if (observed[i]) {
      for (std::size_t t = 0; t < p; ++t)
        if (window_valid.at(i, t) != 0.0) {
          filled.set(i, t, window.at(i, t));
          defined.set(i, t, 1.0);
        }
      continue;
    }
    std::vector<std::size_t> order = obs_nodes;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return distances.at(i, a) < distances.at(i, b);
    });
    std::vector<std::size_t> chosen;
    for (std::size_t o : order) {
      if (!std::isfinite(distances.at(i, o))) break;
      chosen.push_back(o);
      if (chosen.size() == k) break;
    }
    for (std::size_t t = 0; t < p; ++t) {
      double sum = 0.0;
      std::size_t c = 0;
      for (std::size_t o : chosen)
        if (window_valid.at(o, t) != 0.0) {
          sum += window.at(o, t);
          ++c;
        }
      if (c) {
        filled.set(i, t, sum / static_cast<double>(c));
        defined.set(i, t, 1.0);
      }
    }
  }
  return {std::move(filled), std::move(defined)};
}

}  // namespace detail

// KNN+ED: unobserved histories interpolated from the k nearest observed
// neighbours, then forecast with the trained encoder-decoder stage (the MoGE
// block is bypassed).
inline MetricsReport baseline_knn_ed(const MogernnModel& model, const Normalization& norm,
                                     const SpeedDataset& test_data, const Tensor& distances,
                                     const RoleAssignment& roles, std::size_t k, double kappa,
                                     std::optional<double> sigma, std::size_t stride,
                                     EvalOutputs* dump = nullptr) {
  const std::size_t n = test_data.n_sensors(), l = test_data.length();
  const std::size_t p = model.cfg.p, f = model.cfg.f;
  auto observed = roles.test_observed();
  SensorGraph graph = SensorGraph::build(distances.copy_values(), sigma, kappa, observed);
  Tape::Pause pause;
  Rng unused(0);
  EvalOutputs out;
  for (std::size_t start : window_starts(l, p, f, stride)) {
    Tensor window = Tensor::zeros({n, p});
    Tensor window_valid = Tensor::zeros({n, p});
    Tensor target = Tensor::zeros({n, f});
    Tensor target_valid = Tensor::zeros({n, f});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < p; ++t) {
        window.set(i, t, test_data.series.at(i, start + t));
        window_valid.set(i, t, test_data.is_valid(i, start + t) ? 1.0 : 0.0);
      }
      for (std::size_t t = 0; t < f; ++t) {
        target.set(i, t, test_data.series.at(i, start + p + t));
        target_valid.set(i, t, test_data.is_valid(i, start + p + t) ? 1.0 : 0.0);
      }
    }
    auto [filled, defined] = detail::knn_fill(window, window_valid, observed, distances, k);
    Tensor z = Tensor::zeros({n, p});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < p; ++t)
        z.set(i, t, defined.at(i, t) != 0.0 ? norm.apply(filled.at(i, t)) : 0.0);
    Tensor h = encode(z, graph.adjacency, model.encoder);
    Tensor pred_z = decode(h, graph.adjacency, f, model.decoder, nullptr, 0.0, unused);
    Tensor pred = Tensor::zeros({n, f});
    for (std::size_t i = 0; i < pred.size(); ++i)
      pred.mutable_data()[i] = norm.invert(pred_z.data()[i]);
    out.preds.push_back(std::move(pred));
    out.targets.push_back(std::move(target));
    out.valids.push_back(std::move(target_valid));
    out.window_starts.push_back(start);
  }
  MetricsReport report = metrics_report(out, roles, test_data.frequency_min);
  if (dump) *dump = std::move(out);
  return report;
}

// Naive persistence floor: every future step equals the last defined value of
// the KNN-interpolated history (the training mean when a node has none).
inline MetricsReport baseline_persistence(const MogernnModel& model, const Normalization& norm,
                                          const SpeedDataset& test_data, const Tensor& distances,
                                          const RoleAssignment& roles, std::size_t k,
                                          std::size_t stride, EvalOutputs* dump = nullptr) {
  const std::size_t n = test_data.n_sensors(), l = test_data.length();
  const std::size_t p = model.cfg.p, f = model.cfg.f;
  auto observed = roles.test_observed();
  EvalOutputs out;
  for (std::size_t start : window_starts(l, p, f, stride)) {
    Tensor window = Tensor::zeros({n, p});
    Tensor window_valid = Tensor::zeros({n, p});
    Tensor target = Tensor::zeros({n, f});
    Tensor target_valid = Tensor::zeros({n, f});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < p; ++t) {
        window.set(i, t, test_data.series.at(i, start + t));
        window_valid.set(i, t, test_data.is_valid(i, start + t) ? 1.0 : 0.0);
      }
      for (std::size_t t = 0; t < f; ++t) {
        target.set(i, t, test_data.series.at(i, start + p + t));
        target_valid.set(i, t, test_data.is_valid(i, start + p + t) ? 1.0 : 0.0);
      }
    }
    auto [filled, defined] = detail::knn_fill(window, window_valid, observed, distances, k);
    Tensor pred = Tensor::zeros({n, f});
    for (std::size_t i = 0; i < n; ++i) {
      double last = norm.mean;
      for (std::size_t t = 0; t < p; ++t)
        if (defined.at(i, t) != 0.0) last = filled.at(i, t);
      for (std::size_t s = 0; s < f; ++s) pred.set(i, s, last);
    }
    out.preds.push_back(std::move(pred));
    out.targets.push_back(std::move(target));
    out.valids.push_back(std::move(target_valid));
    out.window_starts.push_back(start);
  }
  MetricsReport report = metrics_report(out, roles, test_data.frequency_min);
  if (dump) *dump = std::move(out);
  return report;
}

}  // namespace mogernn
