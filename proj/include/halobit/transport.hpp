#pragma once

// In-process transport between partition workers.
//
// Messages travel as encoded bytes:
//   "HBM1" | u16 src | u16 dst | u32 epoch | u8 layer | u8 phase | block
// where block is the codec wire layout. Each destination owns a mailbox
// keyed by (src, epoch, layer, phase); receivers wait for a specific tag,
// so concurrently running exchanges for different layers never mix.

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "halobit/codec.hpp"
#include "halobit/graph.hpp"
#include "halobit/linalg.hpp"
#include "halobit/rng.hpp"

namespace halobit {

struct MessageTag {
  std::uint32_t epoch = 0;
  std::uint8_t layer = 0;
  Phase phase = Phase::Forward;
  auto operator<=>(const MessageTag&) const = default;
};

struct Message {
  static constexpr std::size_t kEnvelopeBytes = 14;

  std::uint16_t src = 0;
  std::uint16_t dst = 0;
  MessageTag tag;
  QuantizedBlock block;
};

std::vector<std::uint8_t> encode_message(const Message& m);
Message decode_message(std::span<const std::uint8_t> bytes);

// Per-partition traffic. "main" is code payload (fp32-equivalent in
// passthrough), "metadata" the per-row min/scale pairs, "header" the 12-byte
// block headers. The 14-byte message envelope is not counted.
struct TrafficCounters {
  std::uint64_t main_bytes = 0;
  std::uint64_t metadata_bytes = 0;
  std::uint64_t header_bytes = 0;
  std::uint64_t messages = 0;
  std::uint64_t rows = 0;
  std::uint64_t allreduce_bytes = 0;

  TrafficCounters& operator+=(const TrafficCounters& o);
  bool operator==(const TrafficCounters&) const = default;
};

class Transport {
 public:
  explicit Transport(std::uint32_t num_partitions,
                     std::chrono::milliseconds recv_timeout = std::chrono::seconds(60));
  Transport(const Transport&) = delete;
  Transport& operator=(const Transport&) = delete;

  std::uint32_t num_partitions() const { return num_partitions_; }

  void send(const Message& m);
  // Blocks until the message from `src` with `tag` arrives. Throws
  // ProtocolError on timeout (missing message) or when poisoned.
  Message receive(std::uint32_t dst, std::uint32_t src, const MessageTag& tag);

  // Elementwise sum across all partitions, added in partition-id order.
  // Every partition must call it with the same shapes.
  std::vector<DenseMatrix> all_reduce_sum(std::uint32_t n, std::uint32_t epoch,
                                          const std::vector<DenseMatrix>& g);

  void barrier(std::uint32_t n);
  std::uint64_t barrier_generation() const;

  // Wakes every waiter with a ProtocolError. Idempotent; the first reason wins.
  void poison(const std::string& reason);
  bool poisoned() const;

  // Throws ProtocolError if any sent message was never received.
  void check_drained() const;

  TrafficCounters totals() const;
  TrafficCounters partition_totals(std::uint32_t n) const;
  // Traffic of messages tagged with `epoch`, summed over partitions.
  TrafficCounters epoch_totals(std::uint32_t epoch) const;
  std::uint32_t max_epoch_seen() const;

 private:
  struct MailKey {
    std::uint32_t src;
    MessageTag tag;
    auto operator<=>(const MailKey&) const = default;
  };
  struct Mailbox {
    std::mutex mu;
    std::condition_variable cv;
    std::map<MailKey, std::vector<std::uint8_t>> pending;
  };

  void account(std::uint32_t n, std::uint32_t epoch, const TrafficCounters& delta);
  void throw_if_poisoned_locked() const;

  std::uint32_t num_partitions_;
  std::chrono::milliseconds recv_timeout_;
  std::vector<std::unique_ptr<Mailbox>> mailboxes_;

  mutable std::mutex stats_mu_;
  std::vector<std::vector<TrafficCounters>> by_epoch_;  // [epoch][partition]

  // Shared rendezvous state for barrier and all-reduce.
  mutable std::mutex sync_mu_;
  std::condition_variable sync_cv_;
  std::string poison_reason_;
  bool poisoned_ = false;
  std::uint32_t barrier_waiting_ = 0;
  std::uint64_t barrier_gen_ = 0;
  std::uint32_t reduce_waiting_ = 0;
  std::uint64_t reduce_gen_ = 0;
  std::vector<const std::vector<DenseMatrix>*> reduce_inputs_;
  std::vector<DenseMatrix> reduce_result_;
  std::string reduce_error_;
};

// Quantizes `outgoing[k]` for every peer k with a non-empty set, sends it,
// then receives and dequantizes one block from every peer expected to send.
// Forward: outgoing[k] holds the rows of send_sets[k]; peers fill
// recv_sets[k]. Backward: outgoing[k] holds the halo rows of recv_sets[k]
// (gradients flow back to their owners); peers fill send_sets[k].
// Returns one matrix per peer (empty when nothing was expected).
std::vector<DenseMatrix> exchange(Transport& transport, const Partition& part,
                                  const MessageTag& tag, const std::vector<DenseMatrix>& outgoing,
                                  const QuantConfig& cfg, std::uint64_t seed);

// The send half of exchange(); receive_exchange() completes it.
void send_exchange(Transport& transport, const Partition& part, const MessageTag& tag,
                   const std::vector<DenseMatrix>& outgoing, const QuantConfig& cfg,
                   std::uint64_t seed);
std::vector<DenseMatrix> receive_exchange(Transport& transport, const Partition& part,
                                          const MessageTag& tag, std::size_t dim);

}  // namespace halobit
