#pragma once

// Distributed full-graph training over partition workers.
//
// Each worker owns one Partition and a full model replica. Per layer it
// exchanges the rows its peers need (quantized), aggregates local + halo rows
// through its adjacency block, and in the backward pass routes the
// feature-gradient rows of its halo nodes back to their owners. Weight
// gradients are summed across workers and every replica applies the same
// Adam step.
//
// In the asynchronous variant a layer's exchange is started on a
// communication task and its result is consumed one epoch later; epoch 1
// runs with zero halo rows. The staleness adaptor forces a synchronous epoch
// every `staleness` epochs, which also refreshes the buffers.

#include <cstddef>
#include <cstdint>
#include <future>
#include <optional>
#include <string_view>
#include <vector>

#include "halobit/codec.hpp"
#include "halobit/graph.hpp"
#include "halobit/linalg.hpp"
#include "halobit/transport.hpp"

namespace halobit {

enum class ModelKind { Gcn, SageMean };

ModelKind parse_model_kind(std::string_view name);
std::string_view to_string(ModelKind k);

struct ModelConfig {
  ModelKind kind = ModelKind::Gcn;
  // d_0 (input) .. d_L (classes).
  std::vector<std::size_t> widths;
  double dropout = 0.0;

  std::size_t num_layers() const { return widths.empty() ? 0 : widths.size() - 1; }
  // Rows of W^(l): d_{l-1} for GCN, 2 d_{l-1} for SAGE (self | neighbors).
  std::size_t weight_rows(std::size_t layer) const;
  void validate() const;
};

enum class Variant { Sync, Async };
enum class EpochMode { Sync, Async };

std::string_view to_string(EpochMode m);

struct TrainMode {
  Variant variant = Variant::Sync;
  std::uint32_t staleness = 0;  // 0 disables the adaptor
};

// Epoch numbering starts at 1. Async variant only: synchronous when
// staleness > 0 and epoch % staleness == 0.
EpochMode staleness_adaptor(std::uint32_t epoch, const TrainMode& mode);

struct TrainConfig {
  ModelConfig model;
  TrainMode mode;
  QuantConfig quant{1};
  std::uint32_t epochs = 100;
  double lr = 0.01;
  std::uint64_t seed = 0;
  // OpenMP threads per worker; 0 keeps the runtime default.
  int threads_per_worker = 0;
  // Keep every replica's weights per epoch (replica-consistency checks).
  bool record_all_replicas = false;
};

// Glorot-uniform from the keyed init stream; identical on every worker.
std::vector<DenseMatrix> init_weights(const ModelConfig& cfg, std::uint64_t seed);

// Instrumentation: one record per consumed halo buffer or fresh exchange.
struct HaloConsumption {
  std::uint32_t epoch = 0;
  std::uint32_t layer = 0;
  Phase phase = Phase::Forward;
  EpochMode mode = EpochMode::Sync;
  // Epoch whose exchange produced the data; 0 for the zero bootstrap.
  std::uint32_t source_epoch = 0;
  double max_abs = 0.0;
};

struct LayerCache {
  DenseMatrix input;           // local rows (after dropout) then halo rows
  DenseMatrix combined;        // GCN: A·input; SAGE: [local input | A·input]
  DenseMatrix pre_activation;  // combined · W
  DenseMatrix dropout_scale;   // empty when dropout is off
};

class PartitionWorker {
 public:
  PartitionWorker(const Partition& part, Transport& transport, const TrainConfig& cfg,
                  std::vector<DenseMatrix> weights, std::size_t global_train_count);
  PartitionWorker(const PartitionWorker&) = delete;
  PartitionWorker& operator=(const PartitionWorker&) = delete;
  ~PartitionWorker();

  // Logits for the local rows; fills the layer caches.
  DenseMatrix forward(std::uint32_t epoch, EpochMode mode, bool training = true);
  LossResult loss(const DenseMatrix& logits) const;
  // Local (pre-all-reduce) weight gradients.
  std::vector<DenseMatrix> backward(std::uint32_t epoch, EpochMode mode,
                                    const DenseMatrix& loss_grad);
  void apply_gradients(const std::vector<DenseMatrix>& summed);

  // forward + loss + backward + all-reduce + Adam. Returns this worker's
  // share of the loss.
  double train_epoch(std::uint32_t epoch, EpochMode mode);
  // Waits for in-flight communication tasks.
  void drain();

  const std::vector<DenseMatrix>& weights() const { return weights_; }
  void set_weights(std::vector<DenseMatrix> w);
  const std::vector<AdamState>& adam() const { return adam_; }
  const std::vector<LayerCache>& caches() const { return caches_; }
  const std::vector<HaloConsumption>& consumption_log() const { return log_; }
  const Partition& partition() const { return part_; }

 private:
  struct HaloBuffer {
    std::uint32_t epoch = 0;  // 0: never filled
    std::vector<DenseMatrix> per_peer;
    std::future<std::vector<DenseMatrix>> pending;
    std::uint32_t pending_epoch = 0;
  };

  std::vector<DenseMatrix> exchange_now(const MessageTag& tag,
                                        const std::vector<DenseMatrix>& outgoing,
                                        std::size_t dim);
  void launch(HaloBuffer& buf, const MessageTag& tag, std::vector<DenseMatrix> outgoing,
              std::size_t dim);
  void settle(HaloBuffer& buf);
  DenseMatrix assemble_halo(const std::vector<DenseMatrix>& per_peer, std::size_t dim) const;
  void scatter_add_local(DenseMatrix& local, const std::vector<DenseMatrix>& per_peer) const;
  DenseMatrix dropout_scale(std::uint32_t epoch, std::uint32_t layer, std::size_t dim) const;

  const Partition& part_;
  Transport& transport_;
  TrainConfig cfg_;
  std::vector<DenseMatrix> weights_;
  std::vector<AdamState> adam_;
  double loss_norm_;
  std::vector<LayerCache> caches_;
  std::vector<HaloBuffer> fwd_buffers_;  // index l-1: halo embeddings for layer l
  std::vector<HaloBuffer> bwd_buffers_;  // index l-1: gradient contributions from layer l
  std::vector<HaloConsumption> log_;
};

// Full-precision, single-machine, dropout-free forward on the whole graph.
class Evaluator {
 public:
  Evaluator(const Graph& g, const ModelConfig& cfg, bool degree_with_self_loops = true);

  DenseMatrix logits(const std::vector<DenseMatrix>& weights) const;

  struct Accuracy {
    double train = 0.0;
    double val = 0.0;
    double test = 0.0;
  };
  Accuracy accuracy(const std::vector<DenseMatrix>& weights) const;
  static Accuracy accuracy_of(const DenseMatrix& logits, const Graph& g);

 private:
  const Graph& graph_;
  ModelConfig cfg_;
  CsrMatrix adj_;
};

Evaluator::Accuracy evaluate(const std::vector<DenseMatrix>& weights, const Graph& g,
                             const ModelConfig& cfg);

struct EpochRecord {
  std::uint32_t epoch = 0;
  EpochMode mode = EpochMode::Sync;
  double train_loss = 0.0;
  Evaluator::Accuracy acc;
  TrafficCounters traffic;
  double wall_ms = 0.0;
  std::vector<DenseMatrix> weights;                 // replica of partition 0
  std::vector<std::vector<DenseMatrix>> replicas;   // all partitions, if recorded
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::vector<DenseMatrix> initial_weights;
  std::vector<DenseMatrix> final_weights;
  TrafficCounters totals;
  std::vector<std::vector<HaloConsumption>> consumption;  // per partition
};

// Runs one worker thread per partition. The partitions must have been built
// from the adjacency matching cfg.model.kind (normalized for GCN, mean for
// SAGE).
TrainResult train(const Graph& g, const std::vector<Partition>& parts, const TrainConfig& cfg,
                  bool degree_with_self_loops = true);

// Builds the adjacency for cfg.model.kind and partitions it.
CsrMatrix model_adjacency(const Graph& g, ModelKind kind, bool degree_with_self_loops = true);

}  // namespace halobit
