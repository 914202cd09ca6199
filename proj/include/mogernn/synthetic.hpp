#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "mogernn/data.hpp"
#include "mogernn/rng.hpp"

// Desk-scale synthetic traffic: free-flow speed with congestion episodes
// that propagate to graph neighbours with a per-hop lag and amplitude decay,
// plus Gaussian noise. The propagation is what creates the spatial
// correlation the mixture-of-experts block has to exploit.

namespace mogernn {

enum class Topology { ring, line, grid };

inline const char* topology_name(Topology t) {
  switch (t) {
    case Topology::ring: return "ring";
    case Topology::line: return "line";
    case Topology::grid: return "grid";
  }
  throw ValueError("topology_name: invalid topology");
}

inline Topology parse_topology(const std::string& s) {
  if (s == "ring") return Topology::ring;
  if (s == "line") return Topology::line;
  if (s == "grid") return Topology::grid;
  throw ValueError("unknown topology: " + s);
}

struct SyntheticSpec {
  Topology topology = Topology::ring;
  std::size_t nodes = 20;
  std::size_t days = 7;
  double free_speed = 65.0;
  double noise_std = 1.0;
  std::size_t episodes_per_day = 6;
  double wave_decay = 0.8;         // amplitude decay per hop
  std::size_t wave_lag_steps = 1;  // propagation lag per hop
  double spacing_m = 500.0;
  double frequency_min = 5.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (nodes < 2) throw ValueError("SyntheticSpec: need at least 2 nodes");
    if (!(free_speed > 0.0)) throw ValueError("SyntheticSpec: free_speed must be > 0");
    if (!(noise_std >= 0.0)) throw ValueError("SyntheticSpec: noise_std must be >= 0");
    if (days == 0) throw ValueError("SyntheticSpec: days must be positive");
  }
};

namespace detail {

inline std::vector<std::pair<std::size_t, std::size_t>> topology_edges(Topology t, std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  switch (t) {
    case Topology::ring:
      for (std::size_t i = 0; i < n; ++i) edges.push_back({i, (i + 1) % n});
      break;
    case Topology::line:
      for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1});
      break;
    case Topology::grid: {
      const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
      for (std::size_t i = 0; i < n; ++i) {
        if ((i + 1) % cols != 0 && i + 1 < n) edges.push_back({i, i + 1});
        if (i + cols < n) edges.push_back({i, i + cols});
      }
      break;
    }
  }
  return edges;
}

// All-pairs hop counts by BFS over the undirected edge set.
inline std::vector<std::vector<std::size_t>> hop_matrix(
    std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::vector<std::size_t>> nbr(n);
  for (auto [a, b] : edges) {
    nbr[a].push_back(b);
    nbr[b].push_back(a);
  }
  const std::size_t unreachable = static_cast<std::size_t>(-1);
  std::vector<std::vector<std::size_t>> hops(n, std::vector<std::size_t>(n, unreachable));
  for (std::size_t s = 0; s < n; ++s) {
    std::deque<std::size_t> queue{s};
    hops[s][s] = 0;
    while (!queue.empty()) {
      std::size_t v = queue.front();
      queue.pop_front();
      for (std::size_t w : nbr[v])
        if (hops[s][w] == unreachable) {
          hops[s][w] = hops[s][v] + 1;
          queue.push_back(w);
        }
    }
  }
  return hops;
}

}  // namespace detail

struct SyntheticData {
  SpeedDataset dataset;
  Tensor distances;  // N×N shortest-path travel distances
};

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.nodes;
  const std::size_t steps_per_day = static_cast<std::size_t>(std::llround(24.0 * 60.0 / spec.frequency_min));
  const std::size_t horizon = spec.days * steps_per_day;

  auto edges = detail::topology_edges(spec.topology, n);
  auto hops = detail::hop_matrix(n, edges);

  Tensor distances = Tensor::full({n, n}, kInf);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (hops[i][j] != static_cast<std::size_t>(-1))
        distances.set(i, j, static_cast<double>(hops[i][j]) * spec.spacing_m);

  struct Episode {
    std::size_t origin;
    std::size_t start;
    std::size_t duration;
    double amplitude;
  };
  Rng rng(spec.seed);
  std::vector<Episode> episodes;
  for (std::size_t day = 0; day < spec.days; ++day)
    for (std::size_t e = 0; e < spec.episodes_per_day; ++e) {
      Episode ep;
      ep.origin = static_cast<std::size_t>(rng.below(n));
      ep.start = day * steps_per_day + static_cast<std::size_t>(rng.below(steps_per_day));
      ep.duration = 6 + static_cast<std::size_t>(rng.below(19));  // 30 min to 2 h at 5-min steps
      ep.amplitude = rng.uniform(0.35, 0.75) * spec.free_speed;
      episodes.push_back(ep);
    }

  // Half-sine dip profile at the origin; each hop scales by wave_decay and
  // lags by wave_lag_steps.
  const double pi = 3.14159265358979323846;
  Tensor dips = Tensor::zeros({n, horizon});
  for (const Episode& ep : episodes)
    for (std::size_t v = 0; v < n; ++v) {
      const std::size_t h = hops[ep.origin][v];
      if (h == static_cast<std::size_t>(-1)) continue;
      const double gain = std::pow(spec.wave_decay, static_cast<double>(h));
      const std::size_t lag = h * spec.wave_lag_steps;
      for (std::size_t k = 0; k <= ep.duration; ++k) {
        const std::size_t t = ep.start + lag + k;
        if (t >= horizon) break;
        const double profile = ep.amplitude * std::sin(pi * static_cast<double>(k) /
                                                       static_cast<double>(ep.duration));
        dips.set(v, t, dips.at(v, t) + gain * profile);
      }
    }

  SpeedDataset ds;
  for (std::size_t i = 0; i < n; ++i) ds.sensor_ids.push_back("s" + std::to_string(i));
  ds.frequency_min = spec.frequency_min;
  ds.units = "mph";
  ds.zero_is_missing = false;
  ds.start_epoch_s = parse_timestamp("2024-01-01 00:00:00");
  ds.series = Tensor::zeros({n, horizon});
  ds.valid.assign(n * horizon, 1);
  const double hi = spec.free_speed + 4.0 * spec.noise_std;
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t t = 0; t < horizon; ++t) {
      double speed = spec.free_speed - dips.at(v, t);
      if (spec.noise_std > 0.0) speed += rng.normal(0.0, spec.noise_std);
      ds.series.set(v, t, std::clamp(speed, 0.0, hi));
    }

  return SyntheticData{std::move(ds), std::move(distances)};
}

}  // namespace mogernn
