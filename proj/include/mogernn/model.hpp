#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mogernn/graph.hpp"
#include "mogernn/gru.hpp"
#include "mogernn/moge.hpp"

// Full model: MoGE initializes embeddings for unobserved slots, then a
// graph-GRU encoder compresses the history and a graph-GRU decoder emits the
// F-step forecast. All parameter shapes depend only on P, F and the widths,
// never on the node count — the same weights run on any graph.

namespace mogernn {

struct ModelConfig {
  std::size_t p = 12;  // history steps
  std::size_t f = 12;  // prediction steps
  std::size_t h2 = 64;
  std::size_t h_gate = 0;  // 0 → same as h2
  std::size_t diffusion_steps = 2;
  std::size_t top_k = 2;
  std::vector<AggregatorKind> experts = {AggregatorKind::weighted_mean, AggregatorKind::mean,
                                         AggregatorKind::max_pool, AggregatorKind::min_pool,
                                         AggregatorKind::diffusion};
  GatingMode gating = GatingMode::sparse_topk;
  AggregatorKind gru_aggregator = AggregatorKind::diffusion;
  bool diffusion_transposed = false;       // paper index-form reading toggle
  bool gru_uses_masked_adjacency = false;  // Eq. 4 applies to the first layer only
  bool teacher_includes_masked = true;     // feed true values of masked nodes as teacher

  std::size_t gate_width() const { return h_gate == 0 ? h2 : h_gate; }
};

class MogernnModel {
 public:
  ModelConfig cfg;
  MoGEParams moge;
  GraphGruParams encoder;
  GruDecoderParams decoder;

  static MogernnModel init(const ModelConfig& cfg, Rng& rng) {
    MogernnModel m;
    m.cfg = cfg;
    m.moge = MoGEParams::init(cfg.experts, cfg.p, cfg.h2, cfg.gate_width(), cfg.diffusion_steps,
                              cfg.top_k, cfg.gating, rng);
    m.moge.diffusion_transposed = cfg.diffusion_transposed;
    m.encoder = GraphGruParams::init(cfg.gru_aggregator, 1 + cfg.h2, cfg.h2, cfg.diffusion_steps,
                                     cfg.diffusion_transposed, rng);
    m.decoder = GruDecoderParams::init(cfg.gru_aggregator, 1 + cfg.h2, cfg.h2,
                                       cfg.diffusion_steps, cfg.diffusion_transposed, rng);
    return m;
  }

  // One window forward: x and mask are N×P (unobserved entries zero / mask 0),
  // teacher is N×F when tf_rate may be drawn. Output is the N×F forecast.
  Tensor forward(const Tensor& x, const ObservationMask& mask, const SensorGraph& graph,
                 double tf_rate, const Tensor* teacher, Rng& rng) const {
    Tensor spliced = moge_forward(x, mask, graph.adjacency, moge);
    Tensor adj_gru = cfg.gru_uses_masked_adjacency
                         ? mask_adjacency(graph.adjacency, mask.observed_rows())
                         : graph.adjacency;
    Tensor h = encode(spliced, adj_gru, encoder);

    Tensor teacher_rows;
    const Tensor* teacher_rows_ptr = nullptr;
    if (teacher && !cfg.teacher_includes_masked) {
      auto obs = mask.observed_rows();
      teacher_rows = Tensor::zeros({x.rows(), 1});
      for (std::size_t i = 0; i < obs.size(); ++i) teacher_rows.set(i, 0, obs[i] ? 1.0 : 0.0);
      teacher_rows_ptr = &teacher_rows;
    }
    return decode(h, adj_gru, cfg.f, decoder, teacher, tf_rate, rng, teacher_rows_ptr);
  }

  template <typename Fn>
  void visit_params(Fn&& fn) {
    moge.visit(fn);
    encoder.visit("encoder", fn);
    decoder.visit("decoder", fn);
  }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> out;
    visit_params([&](const std::string&, Tensor& t) { out.push_back(t); });
    return out;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    visit_params([&](const std::string&, Tensor& t) { n += t.size(); });
    return n;
  }

  void zero_grads() {
    visit_params([](const std::string&, Tensor& t) { t.zero_grad(); });
  }

  // Value snapshot / restore for early stopping.
  std::vector<std::vector<double>> snapshot_values() {
    std::vector<std::vector<double>> snap;
    visit_params([&](const std::string&, Tensor& t) {
      snap.emplace_back(t.data().begin(), t.data().end());
    });
    return snap;
  }

  void restore_values(const std::vector<std::vector<double>>& snap) {
    std::size_t idx = 0;
    visit_params([&](const std::string&, Tensor& t) {
      const auto& src = snap.at(idx++);
      if (src.size() != t.size()) throw ShapeError("restore_values: size mismatch");
      std::copy(src.begin(), src.end(), t.mutable_data().begin());
    });
  }
};

}  // namespace mogernn
