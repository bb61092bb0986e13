#pragma once

// Helpers shared by the trainer and acceptance tests.

#include <algorithm>
#include <cmath>
#include <future>
#include <vector>

#include "halobit/dataset.hpp"
#include "halobit/graph.hpp"
#include "halobit/trainer.hpp"
#include "halobit/transport.hpp"

namespace halobit::testing {

inline Graph small_sbm(std::uint32_t per_community, std::uint32_t communities, std::uint32_t d,
                       std::uint64_t seed, double p_in = 0.2, double p_out = 0.02,
                       double noise = 1.0) {
  SbmSpec s;
  s.nodes_per_community = per_community;
  s.communities = communities;
  s.p_in = p_in;
  s.p_out = p_out;
  s.feature_dim = d;
  s.feature_noise = noise;
  s.seed = seed;
  return generate_sbm(s);
}

inline std::vector<Partition> split(const Graph& g, ModelKind kind, std::uint32_t n,
                                    PartitionStrategy strategy = PartitionStrategy::Contiguous,
                                    std::uint64_t seed = 0) {
  return build_partitions(g, model_adjacency(g, kind), partition_nodes(g, n, strategy, seed));
}

inline TrainConfig gcn_config(const Graph& g, std::vector<std::size_t> hidden, unsigned bits,
                              std::uint32_t epochs, std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.model.widths.push_back(g.feature_dim());
  for (auto h : hidden) cfg.model.widths.push_back(h);
  cfg.model.widths.push_back(g.num_classes);
  cfg.quant = QuantConfig(bits);
  cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.threads_per_worker = 1;
  return cfg;
}

// Relative difference of two weight lists, norm-wise per layer; the max
// over layers.
inline double relative_diff(const std::vector<DenseMatrix>& a, const std::vector<DenseMatrix>& b) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a[l].size(); ++i) {
      const double d = a[l].values()[i] - b[l].values()[i];
      num += d * d;
      den += b[l].values()[i] * b[l].values()[i];
    }
    worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-300));
  }
  return worst;
}

inline double max_elementwise_diff(const std::vector<DenseMatrix>& a,
                                   const std::vector<DenseMatrix>& b) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) worst = std::max(worst, max_abs_diff(a[l], b[l]));
  return worst;
}

// One synchronous step on every partition (forward, loss, backward,
// all-reduce) without the optimizer. Returns the summed gradients seen by
// partition 0 and the summed loss.
struct StepResult {
  std::vector<DenseMatrix> grads;
  double loss = 0.0;
};

inline StepResult distributed_gradients(const Graph& g, const std::vector<Partition>& parts,
                                        const TrainConfig& cfg,
                                        const std::vector<DenseMatrix>& weights) {
  const auto n = static_cast<std::uint32_t>(parts.size());
  Transport transport(n);
  const std::size_t train_count = g.count(NodeSplit::Train);
  std::vector<std::future<StepResult>> futures;
  for (std::uint32_t p = 0; p < n; ++p) {
    futures.push_back(std::async(std::launch::async, [&, p] {
      PartitionWorker w(parts[p], transport, cfg, weights, train_count);
      const auto logits = w.forward(1, EpochMode::Sync);
      const auto lr = w.loss(logits);
      const auto local = w.backward(1, EpochMode::Sync, lr.grad);
      return StepResult{transport.all_reduce_sum(p, 1, local), lr.loss};
    }));
  }
  StepResult out;
  for (std::uint32_t p = 0; p < n; ++p) {
    auto r = futures[p].get();
    if (p == 0) out.grads = std::move(r.grads);
    out.loss += r.loss;
  }
  return out;
}

}  // namespace halobit::testing
