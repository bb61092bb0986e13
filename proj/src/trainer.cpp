#include "halobit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <string>

#include "halobit/error.hpp"
#include "halobit/kernels.hpp"
#include "halobit/rng.hpp"

namespace halobit {

ModelKind parse_model_kind(std::string_view name) {
  if (name == "gcn") return ModelKind::Gcn;
  if (name == "sage" || name == "sage_mean") return ModelKind::SageMean;
  throw ConfigError("unknown model '" + std::string(name) + "' (expected gcn or sage)");
}

std::string_view to_string(ModelKind k) { return k == ModelKind::Gcn ? "gcn" : "sage"; }

std::string_view to_string(EpochMode m) { return m == EpochMode::Sync ? "sync" : "async"; }

std::size_t ModelConfig::weight_rows(std::size_t layer) const {
  const std::size_t d = widths.at(layer - 1);
  return kind == ModelKind::SageMean ? 2 * d : d;
}

void ModelConfig::validate() const {
  if (widths.size() < 2) throw ConfigError("model needs at least one layer");
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("model layer widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

EpochMode staleness_adaptor(std::uint32_t epoch, const TrainMode& mode) {
  if (mode.variant == Variant::Sync) return EpochMode::Sync;
  if (mode.staleness > 0 && epoch % mode.staleness == 0) return EpochMode::Sync;
  return EpochMode::Async;
}

std::vector<DenseMatrix> init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<DenseMatrix> weights;
  for (std::size_t l = 1; l <= cfg.num_layers(); ++l) {
    const std::size_t fan_in = cfg.weight_rows(l);
    const std::size_t fan_out = cfg.widths[l];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    const RngStream rng(StreamKey{.seed = seed,
                                  .layer = static_cast<std::uint32_t>(l),
                                  .domain = StreamDomain::WeightInit});
    DenseMatrix w(fan_in, fan_out);
    auto v = w.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (2.0 * rng.at(i) - 1.0) * bound;
    weights.push_back(std::move(w));
  }
  return weights;
}

PartitionWorker::PartitionWorker(const Partition& part, Transport& transport,
                                 const TrainConfig& cfg, std::vector<DenseMatrix> weights,
                                 std::size_t global_train_count)
    : part_(part),
      transport_(transport),
      cfg_(cfg),
      loss_norm_(global_train_count > 0 ? static_cast<double>(global_train_count) : 1.0) {
  cfg_.model.validate();
  set_weights(std::move(weights));
  for (const auto& w : weights_) adam_.emplace_back(w.rows(), w.cols(), cfg_.lr);
  const std::size_t layers = cfg_.model.num_layers();
  fwd_buffers_.resize(layers);
  bwd_buffers_.resize(layers);
  if (part_.features.cols() != cfg_.model.widths.front()) {
    throw ConfigError("partition feature width " + std::to_string(part_.features.cols()) +
                      " != model input width " + std::to_string(cfg_.model.widths.front()));
  }
}

PartitionWorker::~PartitionWorker() {
  for (auto* buffers : {&fwd_buffers_, &bwd_buffers_}) {
    for (auto& b : *buffers) {
      if (b.pending.valid()) {
        try {
          b.pending.get();
        } catch (...) {
          // Already reported through the worker that failed first.
        }
      }
    }
  }
}

void PartitionWorker::set_weights(std::vector<DenseMatrix> w) {
  if (w.size() != cfg_.model.num_layers()) throw ShapeError("weight count != model layers");
  for (std::size_t l = 1; l <= w.size(); ++l) {
    if (w[l - 1].rows() != cfg_.model.weight_rows(l) || w[l - 1].cols() != cfg_.model.widths[l]) {
      throw ShapeError("weight shape mismatch at layer " + std::to_string(l));
    }
  }
  weights_ = std::move(w);
}

DenseMatrix PartitionWorker::dropout_scale(std::uint32_t epoch, std::uint32_t layer,
                                           std::size_t dim) const {
  // Keyed by global node id, so a node's mask does not depend on which
  // partition owns it.
  const double p = cfg_.model.dropout;
  const double keep_scale = 1.0 / (1.0 - p);
  const RngStream rng(StreamKey{
      .seed = cfg_.seed, .epoch = epoch, .layer = layer, .domain = StreamDomain::Dropout});
  DenseMatrix scale(part_.num_local(), dim);
  for (std::size_t i = 0; i < part_.num_local(); ++i) {
    const std::uint64_t base = std::uint64_t{part_.local_nodes[i]} * dim;
    auto row = scale.row(i);
    for (std::size_t j = 0; j < dim; ++j) row[j] = rng.at(base + j) >= p ? keep_scale : 0.0;
  }
  return scale;
}

std::vector<DenseMatrix> PartitionWorker::exchange_now(const MessageTag& tag,
                                                       const std::vector<DenseMatrix>& outgoing,
                                                       std::size_t dim) {
  send_exchange(transport_, part_, tag, outgoing, cfg_.quant, cfg_.seed);
  return receive_exchange(transport_, part_, tag, dim);
}

void PartitionWorker::launch(HaloBuffer& buf, const MessageTag& tag,
                             std::vector<DenseMatrix> outgoing, std::size_t dim) {
  buf.pending_epoch = tag.epoch;
  buf.pending = std::async(
      std::launch::async,
      [&transport = transport_, &part = part_, tag, outgoing = std::move(outgoing),
       quant = cfg_.quant, seed = cfg_.seed, dim, threads = cfg_.threads_per_worker] {
        if (threads > 0) kernels::set_thread_count(threads);
        send_exchange(transport, part, tag, outgoing, quant, seed);
        return receive_exchange(transport, part, tag, dim);
      });
}

void PartitionWorker::settle(HaloBuffer& buf) {
  if (!buf.pending.valid()) return;
  buf.per_peer = buf.pending.get();
  buf.epoch = buf.pending_epoch;
}

void PartitionWorker::drain() {
  for (auto& b : fwd_buffers_) settle(b);
  for (auto& b : bwd_buffers_) settle(b);
}

DenseMatrix PartitionWorker::assemble_halo(const std::vector<DenseMatrix>& per_peer,
                                           std::size_t dim) const {
  DenseMatrix halo(part_.num_halo(), dim);
  for (std::uint32_t k = 0; k < part_.num_partitions; ++k) {
    const auto& slots = part_.recv_sets[k];
    if (slots.empty()) continue;
    const DenseMatrix& rows = per_peer.at(k);
    if (rows.rows() != slots.size() || rows.cols() != dim) {
      throw ProtocolError("halo block from partition " + std::to_string(k) + " has wrong shape");
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
      std::copy(rows.row(i).begin(), rows.row(i).end(), halo.row(slots[i]).begin());
    }
  }
  return halo;
}

void PartitionWorker::scatter_add_local(DenseMatrix& local,
                                        const std::vector<DenseMatrix>& per_peer) const {
  for (std::uint32_t k = 0; k < part_.num_partitions; ++k) {
    const auto& targets = part_.send_sets[k];
    if (targets.empty()) continue;
    const DenseMatrix& rows = per_peer.at(k);
    if (rows.rows() != targets.size() || rows.cols() != local.cols()) {
      throw ProtocolError("gradient block from partition " + std::to_string(k) +
                          " has wrong shape");
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
      auto dst = local.row(targets[i]);
      auto src = rows.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
}

namespace {

double max_abs_of(const std::vector<DenseMatrix>& blocks) {
  double m = 0.0;
  for (const auto& b : blocks) m = std::max(m, max_abs(b));
  return m;
}

std::string stale_message(std::uint32_t have, std::uint32_t epoch, std::uint32_t layer,
                          const char* what) {
  if (have == 0) {
    return std::string("buffer underflow: ") + what + " buffer for layer " +
           std::to_string(layer) + " was never filled before epoch " + std::to_string(epoch);
  }
  return std::string("stale ") + what + " buffer for layer " + std::to_string(layer) +
         ": holds epoch " + std::to_string(have) + ", epoch " + std::to_string(epoch) +
         " needs epoch " + std::to_string(epoch - 1);
}

}  // namespace

DenseMatrix PartitionWorker::forward(std::uint32_t epoch, EpochMode mode, bool training) {
  const std::size_t layers = cfg_.model.num_layers();
  const bool distributed = part_.num_partitions > 1;
  caches_.assign(layers, {});
  DenseMatrix h = part_.features;
  for (std::uint32_t l = 1; l <= layers; ++l) {
    const std::size_t dim = cfg_.model.widths[l - 1];
    LayerCache& cache = caches_[l - 1];
    DenseMatrix hd = h;
    if (training && cfg_.model.dropout > 0.0) {
      cache.dropout_scale = dropout_scale(epoch, l, dim);
      hd = hadamard(h, cache.dropout_scale);
    }

    DenseMatrix halo(part_.num_halo(), dim);
    if (distributed) {
      std::vector<DenseMatrix> outgoing(part_.num_partitions);
      for (std::uint32_t k = 0; k < part_.num_partitions; ++k) {
        outgoing[k] = gather_rows(hd, part_.send_sets[k]);
      }
      const MessageTag tag{epoch, static_cast<std::uint8_t>(l), Phase::Forward};
      HaloBuffer& buf = fwd_buffers_[l - 1];
      HaloConsumption rec{epoch, l, Phase::Forward, mode, 0, 0.0};
      if (mode == EpochMode::Sync) {
        settle(buf);
        buf.per_peer = exchange_now(tag, outgoing, dim);
        buf.epoch = epoch;
        halo = assemble_halo(buf.per_peer, dim);
        rec.source_epoch = epoch;
      } else {
        if (epoch > 1) {
          settle(buf);
          if (buf.epoch != epoch - 1) {
            throw ProtocolError(stale_message(buf.epoch, epoch, l, "embedding"));
          }
          halo = assemble_halo(buf.per_peer, dim);
          rec.source_epoch = buf.epoch;
        }
        launch(buf, tag, std::move(outgoing), dim);
      }
      rec.max_abs = max_abs(halo);
      log_.push_back(rec);
    }

    cache.input = vconcat(hd, halo);
    DenseMatrix agg = spmm(part_.adj_block, cache.input);
    cache.combined = cfg_.model.kind == ModelKind::Gcn ? std::move(agg) : hconcat(hd, agg);
    cache.pre_activation = matmul(cache.combined, weights_[l - 1]);
    h = l < layers ? relu(cache.pre_activation) : cache.pre_activation;
  }
  return h;
}

LossResult PartitionWorker::loss(const DenseMatrix& logits) const {
  return softmax_cross_entropy(logits, part_.labels, part_.mask(NodeSplit::Train), loss_norm_);
}

std::vector<DenseMatrix> PartitionWorker::backward(std::uint32_t epoch, EpochMode mode,
                                                   const DenseMatrix& loss_grad) {
  const std::size_t layers = cfg_.model.num_layers();
  if (caches_.size() != layers) throw ProtocolError("backward called without a forward pass");
  const bool distributed = part_.num_partitions > 1;
  const bool sage = cfg_.model.kind == ModelKind::SageMean;
  std::vector<DenseMatrix> grads(layers);
  DenseMatrix j = loss_grad;
  for (std::uint32_t l = static_cast<std::uint32_t>(layers); l >= 1; --l) {
    const LayerCache& cache = caches_[l - 1];
    const DenseMatrix delta = l == layers ? j : hadamard(j, relu_grad(cache.pre_activation));
    grads[l - 1] = matmul(transpose(cache.combined), delta);
    if (l == 1) break;

    const std::size_t dim = cfg_.model.widths[l - 1];
    const DenseMatrix d_combined = matmul(delta, transpose(weights_[l - 1]));
    const DenseMatrix d_agg = sage ? slice_cols(d_combined, dim, 2 * dim) : d_combined;
    const DenseMatrix routed = spmm(part_.adj_block_t, d_agg);
    DenseMatrix local = slice_rows(routed, 0, part_.num_local());
    if (sage) add_inplace(local, slice_cols(d_combined, 0, dim));

    if (distributed) {
      const DenseMatrix halo_grad =
          slice_rows(routed, part_.num_local(), part_.num_local() + part_.num_halo());
      std::vector<DenseMatrix> outgoing(part_.num_partitions);
      for (std::uint32_t k = 0; k < part_.num_partitions; ++k) {
        outgoing[k] = gather_rows(halo_grad, part_.recv_sets[k]);
      }
      const MessageTag tag{epoch, static_cast<std::uint8_t>(l), Phase::Backward};
      HaloBuffer& buf = bwd_buffers_[l - 1];
      HaloConsumption rec{epoch, l, Phase::Backward, mode, 0, 0.0};
      if (mode == EpochMode::Sync) {
        settle(buf);
        buf.per_peer = exchange_now(tag, outgoing, dim);
        buf.epoch = epoch;
        scatter_add_local(local, buf.per_peer);
        rec.source_epoch = epoch;
        rec.max_abs = max_abs_of(buf.per_peer);
      } else {
        if (epoch > 1) {
          settle(buf);
          if (buf.epoch != epoch - 1) {
            throw ProtocolError(stale_message(buf.epoch, epoch, l, "gradient"));
          }
          scatter_add_local(local, buf.per_peer);
          rec.source_epoch = buf.epoch;
          rec.max_abs = max_abs_of(buf.per_peer);
        }
        launch(buf, tag, std::move(outgoing), dim);
      }
      log_.push_back(rec);
    }

    const DenseMatrix& scale = caches_[l - 1].dropout_scale;
    j = scale.empty() ? std::move(local) : hadamard(local, scale);
  }
  return grads;
}

void PartitionWorker::apply_gradients(const std::vector<DenseMatrix>& summed) {
  if (summed.size() != weights_.size()) throw ShapeError("gradient count != layer count");
  for (std::size_t l = 0; l < weights_.size(); ++l) adam_step(weights_[l], summed[l], adam_[l]);
}

double PartitionWorker::train_epoch(std::uint32_t epoch, EpochMode mode) {
  const DenseMatrix logits = forward(epoch, mode);
  LossResult lr = loss(logits);
  if (!std::isfinite(lr.loss)) {
    throw NumericError("partition " + std::to_string(part_.id) + ": loss is " +
                       std::to_string(lr.loss) + " at epoch " + std::to_string(epoch) +
                       " (learning rate too high, or a codec blow-up)");
  }
  const auto grads = backward(epoch, mode, lr.grad);
  const auto summed = transport_.all_reduce_sum(part_.id, epoch, grads);
  apply_gradients(summed);
  return lr.loss;
}

CsrMatrix model_adjacency(const Graph& g, ModelKind kind, bool degree_with_self_loops) {
  return kind == ModelKind::Gcn ? normalize_adjacency(g, degree_with_self_loops)
                                : mean_adjacency(g);
}

Evaluator::Evaluator(const Graph& g, const ModelConfig& cfg, bool degree_with_self_loops)
    : graph_(g), cfg_(cfg), adj_(model_adjacency(g, cfg.kind, degree_with_self_loops)) {
  cfg_.validate();
}

DenseMatrix Evaluator::logits(const std::vector<DenseMatrix>& weights) const {
  const std::size_t layers = cfg_.num_layers();
  if (weights.size() != layers) throw ShapeError("evaluate: weight count != layer count");
  DenseMatrix h = graph_.features;
  for (std::size_t l = 1; l <= layers; ++l) {
    DenseMatrix agg = spmm(adj_, h);
    DenseMatrix comb = cfg_.kind == ModelKind::Gcn ? std::move(agg) : hconcat(h, agg);
    DenseMatrix z = matmul(comb, weights[l - 1]);
    h = l < layers ? relu(z) : std::move(z);
  }
  return h;
}

Evaluator::Accuracy Evaluator::accuracy_of(const DenseMatrix& logits, const Graph& g) {
  std::size_t hits[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const auto pred = static_cast<std::uint32_t>(
        std::distance(row.begin(), std::max_element(row.begin(), row.end())));
    const auto s = static_cast<std::size_t>(g.splits[i]);
    ++totals[s];
    if (pred == g.labels[i]) ++hits[s];
  }
  auto frac = [&](NodeSplit s) {
    const auto i = static_cast<std::size_t>(s);
    return totals[i] ? static_cast<double>(hits[i]) / static_cast<double>(totals[i]) : 0.0;
  };
  return {frac(NodeSplit::Train), frac(NodeSplit::Val), frac(NodeSplit::Test)};
}

Evaluator::Accuracy Evaluator::accuracy(const std::vector<DenseMatrix>& weights) const {
  return accuracy_of(logits(weights), graph_);
}

Evaluator::Accuracy evaluate(const std::vector<DenseMatrix>& weights, const Graph& g,
                             const ModelConfig& cfg) {
  return Evaluator(g, cfg).accuracy(weights);
}

namespace {

struct WorkerOutput {
  std::vector<double> losses;
  std::vector<EpochMode> modes;
  std::vector<std::vector<DenseMatrix>> weights;
  std::vector<double> wall_ms;
  std::vector<HaloConsumption> log;
  std::vector<DenseMatrix> final_weights;
};

std::string current_exception_message() {
  try {
    throw;
  } catch (const std::exception& e) {
    return e.what();
  } catch (...) {
    return "unknown error";
  }
}

}  // namespace

TrainResult train(const Graph& g, const std::vector<Partition>& parts, const TrainConfig& cfg,
                  bool degree_with_self_loops) {
  cfg.model.validate();
  g.validate();
  const auto num_parts = static_cast<std::uint32_t>(parts.size());
  if (num_parts == 0) throw ConfigError("train: no partitions");
  for (std::uint32_t n = 0; n < num_parts; ++n) {
    if (parts[n].id != n || parts[n].num_partitions != num_parts) {
      throw ConfigError("train: partition list is not ordered by id");
    }
  }
  if (cfg.model.widths.front() != g.feature_dim()) {
    throw ConfigError("model input width " + std::to_string(cfg.model.widths.front()) +
                      " != feature dim " + std::to_string(g.feature_dim()));
  }
  if (cfg.model.widths.back() != g.num_classes) {
    throw ConfigError("model output width " + std::to_string(cfg.model.widths.back()) +
                      " != number of classes " + std::to_string(g.num_classes));
  }

  TrainResult result;
  result.initial_weights = init_weights(cfg.model, cfg.seed);
  const std::size_t global_train = g.count(NodeSplit::Train);
  Transport transport(num_parts);

  auto run_worker = [&](std::uint32_t n) {
    if (cfg.threads_per_worker > 0) kernels::set_thread_count(cfg.threads_per_worker);
    WorkerOutput out;
    PartitionWorker worker(parts[n], transport, cfg, result.initial_weights, global_train);
    try {
      for (std::uint32_t t = 1; t <= cfg.epochs; ++t) {
        const EpochMode mode = staleness_adaptor(t, cfg.mode);
        const auto start = std::chrono::steady_clock::now();
        out.losses.push_back(worker.train_epoch(t, mode));
        const auto stop = std::chrono::steady_clock::now();
        out.modes.push_back(mode);
        out.wall_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
        if (n == 0 || cfg.record_all_replicas) out.weights.push_back(worker.weights());
      }
      worker.drain();
      transport.barrier(n);
    } catch (...) {
      transport.poison("partition " + std::to_string(n) + ": " + current_exception_message());
      throw;
    }
    out.log = worker.consumption_log();
    out.final_weights = worker.weights();
    return out;
  };

  std::vector<std::future<WorkerOutput>> futures;
  futures.reserve(num_parts);
  for (std::uint32_t n = 0; n < num_parts; ++n) {
    futures.push_back(std::async(std::launch::async, run_worker, n));
  }
  std::vector<WorkerOutput> outputs(num_parts);
  std::exception_ptr root_cause;
  std::exception_ptr any_error;
  for (std::uint32_t n = 0; n < num_parts; ++n) {
    try {
      outputs[n] = futures[n].get();
    } catch (const ProtocolError& e) {
      if (!any_error) any_error = std::current_exception();
      if (!root_cause && std::string_view(e.what()).rfind("transport aborted", 0) != 0) {
        root_cause = std::current_exception();
      }
    } catch (...) {
      if (!any_error) any_error = std::current_exception();
      if (!root_cause) root_cause = std::current_exception();
    }
  }
  if (root_cause) std::rethrow_exception(root_cause);
  if (any_error) std::rethrow_exception(any_error);
  transport.check_drained();

  const Evaluator evaluator(g, cfg.model, degree_with_self_loops);
  for (std::uint32_t t = 1; t <= cfg.epochs; ++t) {
    EpochRecord rec;
    rec.epoch = t;
    rec.mode = outputs[0].modes[t - 1];
    for (std::uint32_t n = 0; n < num_parts; ++n) rec.train_loss += outputs[n].losses[t - 1];
    rec.weights = outputs[0].weights[t - 1];
    if (cfg.record_all_replicas) {
      for (std::uint32_t n = 0; n < num_parts; ++n) {
        rec.replicas.push_back(outputs[n].weights[t - 1]);
      }
    }
    rec.acc = evaluator.accuracy(rec.weights);
    rec.traffic = transport.epoch_totals(t);
    rec.wall_ms = outputs[0].wall_ms[t - 1];
    result.epochs.push_back(std::move(rec));
  }
  result.final_weights = cfg.epochs > 0 ? outputs[0].final_weights : result.initial_weights;
  result.totals = transport.totals();
  for (auto& out : outputs) result.consumption.push_back(std::move(out.log));
  return result;
}

}  // namespace halobit
