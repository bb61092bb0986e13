#include "halobit/transport.hpp"

#include <algorithm>
#include <cstring>

#include "halobit/error.hpp"

namespace halobit {

namespace {

constexpr char kMagic[4] = {'H', 'B', 'M', '1'};

std::string describe(std::uint32_t src, std::uint32_t dst, const MessageTag& tag) {
  return "message " + std::to_string(src) + "->" + std::to_string(dst) + " (epoch " +
         std::to_string(tag.epoch) + ", layer " + std::to_string(tag.layer) + ", " +
         (tag.phase == Phase::Forward ? "forward" : "backward") + ")";
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw CodecError("message envelope truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_message(const Message& m) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint16_t>(out, m.src);
  put<std::uint16_t>(out, m.dst);
  put<std::uint32_t>(out, m.tag.epoch);
  put<std::uint8_t>(out, m.tag.layer);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(m.tag.phase));
  encode_block_into(m.block, out);
  return out;
}

Message decode_message(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < Message::kEnvelopeBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CodecError("message does not start with the HBM1 magic");
  }
  std::size_t pos = 4;
  Message m;
  m.src = get<std::uint16_t>(bytes, pos);
  m.dst = get<std::uint16_t>(bytes, pos);
  m.tag.epoch = get<std::uint32_t>(bytes, pos);
  m.tag.layer = get<std::uint8_t>(bytes, pos);
  const auto phase = get<std::uint8_t>(bytes, pos);
  if (phase > 1) throw CodecError("message has unknown phase " + std::to_string(phase));
  m.tag.phase = static_cast<Phase>(phase);
  std::size_t used = 0;
  m.block = decode_block(bytes.subspan(pos), &used);
  if (pos + used != bytes.size()) throw CodecError("message has trailing bytes");
  return m;
}

TrafficCounters& TrafficCounters::operator+=(const TrafficCounters& o) {
  main_bytes += o.main_bytes;
  metadata_bytes += o.metadata_bytes;
  header_bytes += o.header_bytes;
  messages += o.messages;
  rows += o.rows;
  allreduce_bytes += o.allreduce_bytes;
  return *this;
}

Transport::Transport(std::uint32_t num_partitions, std::chrono::milliseconds recv_timeout)
    : num_partitions_(num_partitions), recv_timeout_(recv_timeout) {
  if (num_partitions == 0) throw ConfigError("transport needs at least one partition");
  if (num_partitions > 0xFFFF) throw ConfigError("too many partitions for the u16 wire field");
  mailboxes_.reserve(num_partitions);
  for (std::uint32_t i = 0; i < num_partitions; ++i) {
    mailboxes_.push_back(std::make_unique<Mailbox>());
  }
  reduce_inputs_.assign(num_partitions, nullptr);
}

void Transport::account(std::uint32_t n, std::uint32_t epoch, const TrafficCounters& delta) {
  std::lock_guard lock(stats_mu_);
  if (by_epoch_.size() <= epoch) {
    by_epoch_.resize(epoch + 1, std::vector<TrafficCounters>(num_partitions_));
  }
  by_epoch_[epoch][n] += delta;
}

void Transport::send(const Message& m) {
  if (m.src >= num_partitions_ || m.dst >= num_partitions_ || m.src == m.dst) {
    throw ProtocolError("invalid endpoints for " + describe(m.src, m.dst, m.tag));
  }
  auto bytes = encode_message(m);
  TrafficCounters delta;
  delta.main_bytes = payload_bytes(m.block.num_rows, m.block.dim, m.block.bits);
  delta.metadata_bytes = metadata_bytes(m.block.num_rows, m.block.bits);
  delta.header_bytes = QuantizedBlock::kHeaderBytes;
  delta.messages = 1;
  delta.rows = m.block.num_rows;

  Mailbox& box = *mailboxes_[m.dst];
  {
    std::lock_guard lock(box.mu);
    if (poisoned()) throw ProtocolError("transport aborted: " + poison_reason_);
    const auto [it, inserted] = box.pending.try_emplace(MailKey{m.src, m.tag}, std::move(bytes));
    if (!inserted) throw ProtocolError("duplicate " + describe(m.src, m.dst, m.tag));
  }
  account(m.src, m.tag.epoch, delta);
  box.cv.notify_all();
}

Message Transport::receive(std::uint32_t dst, std::uint32_t src, const MessageTag& tag) {
  if (dst >= num_partitions_ || src >= num_partitions_) {
    throw ProtocolError("invalid endpoints for " + describe(src, dst, tag));
  }
  Mailbox& box = *mailboxes_[dst];
  std::vector<std::uint8_t> bytes;
  {
    std::unique_lock lock(box.mu);
    const MailKey key{src, tag};
    const bool arrived = box.cv.wait_for(lock, recv_timeout_, [&] {
      return poisoned() || box.pending.contains(key);
    });
    if (poisoned()) {
      std::lock_guard sync(sync_mu_);
      throw ProtocolError("transport aborted: " + poison_reason_);
    }
    if (!arrived) {
      lock.unlock();
      const std::string what = "missing expected " + describe(src, dst, tag);
      poison(what);
      throw ProtocolError(what);
    }
    auto node = box.pending.extract(key);
    bytes = std::move(node.mapped());
  }
  Message m = decode_message(bytes);
  if (m.src != src || m.dst != dst || m.tag != tag) {
    throw ProtocolError("tag mismatch: expected " + describe(src, dst, tag) + ", got " +
                        describe(m.src, m.dst, m.tag));
  }
  return m;
}

void Transport::throw_if_poisoned_locked() const {
  if (poisoned_) throw ProtocolError("transport aborted: " + poison_reason_);
}

std::vector<DenseMatrix> Transport::all_reduce_sum(std::uint32_t n, std::uint32_t epoch,
                                                   const std::vector<DenseMatrix>& g) {
  if (n >= num_partitions_) throw ProtocolError("all_reduce_sum: partition id out of range");
  if (num_partitions_ == 1) return g;

  TrafficCounters delta;
  for (const auto& m : g) delta.allreduce_bytes += m.size() * sizeof(float);
  account(n, epoch, delta);

  std::unique_lock lock(sync_mu_);
  throw_if_poisoned_locked();
  const std::uint64_t gen = reduce_gen_;
  reduce_inputs_[n] = &g;
  if (++reduce_waiting_ == num_partitions_) {
    reduce_error_.clear();
    const auto& first = *reduce_inputs_[0];
    for (std::uint32_t p = 1; p < num_partitions_ && reduce_error_.empty(); ++p) {
      const auto& other = *reduce_inputs_[p];
      bool same = other.size() == first.size();
      for (std::size_t i = 0; same && i < first.size(); ++i) {
        same = other[i].rows() == first[i].rows() && other[i].cols() == first[i].cols();
      }
      if (!same) {
        reduce_error_ = "all_reduce_sum: partition " + std::to_string(p) +
                        " contributed shapes that differ from partition 0";
      }
    }
    if (reduce_error_.empty()) {
      reduce_result_ = first;
      for (std::uint32_t p = 1; p < num_partitions_; ++p) {
        for (std::size_t i = 0; i < first.size(); ++i) {
          add_inplace(reduce_result_[i], (*reduce_inputs_[p])[i]);
        }
      }
    }
    std::fill(reduce_inputs_.begin(), reduce_inputs_.end(), nullptr);
    reduce_waiting_ = 0;
    ++reduce_gen_;
    sync_cv_.notify_all();
  } else {
    sync_cv_.wait(lock, [&] { return poisoned_ || reduce_gen_ != gen; });
    throw_if_poisoned_locked();
  }
  if (!reduce_error_.empty()) throw ProtocolError(reduce_error_);
  return reduce_result_;
}

void Transport::barrier(std::uint32_t n) {
  if (n >= num_partitions_) throw ProtocolError("barrier: partition id out of range");
  std::unique_lock lock(sync_mu_);
  throw_if_poisoned_locked();
  if (num_partitions_ == 1) return;
  const std::uint64_t gen = barrier_gen_;
  if (++barrier_waiting_ == num_partitions_) {
    barrier_waiting_ = 0;
    ++barrier_gen_;
    sync_cv_.notify_all();
    return;
  }
  sync_cv_.wait(lock, [&] { return poisoned_ || barrier_gen_ != gen; });
  throw_if_poisoned_locked();
}

std::uint64_t Transport::barrier_generation() const {
  std::lock_guard lock(sync_mu_);
  return barrier_gen_;
}

void Transport::poison(const std::string& reason) {
  {
    std::lock_guard lock(sync_mu_);
    if (!poisoned_) {
      poisoned_ = true;
      poison_reason_ = reason;
    }
  }
  sync_cv_.notify_all();
  for (auto& box : mailboxes_) {
    std::lock_guard lock(box->mu);
    box->cv.notify_all();
  }
}

bool Transport::poisoned() const {
  std::lock_guard lock(sync_mu_);
  return poisoned_;
}

void Transport::check_drained() const {
  for (std::uint32_t dst = 0; dst < num_partitions_; ++dst) {
    auto& box = *mailboxes_[dst];
    std::lock_guard lock(box.mu);
    if (!box.pending.empty()) {
      const auto& key = box.pending.begin()->first;
      throw ProtocolError("unconsumed " + describe(key.src, dst, key.tag) + " (" +
                          std::to_string(box.pending.size()) + " pending for partition " +
                          std::to_string(dst) + ")");
    }
  }
}

TrafficCounters Transport::totals() const {
  std::lock_guard lock(stats_mu_);
  TrafficCounters t;
  for (const auto& epoch : by_epoch_)
    for (const auto& c : epoch) t += c;
  return t;
}

TrafficCounters Transport::partition_totals(std::uint32_t n) const {
  std::lock_guard lock(stats_mu_);
  TrafficCounters t;
  for (const auto& epoch : by_epoch_) t += epoch.at(n);
  return t;
}

TrafficCounters Transport::epoch_totals(std::uint32_t epoch) const {
  std::lock_guard lock(stats_mu_);
  TrafficCounters t;
  if (epoch < by_epoch_.size())
    for (const auto& c : by_epoch_[epoch]) t += c;
  return t;
}

std::uint32_t Transport::max_epoch_seen() const {
  std::lock_guard lock(stats_mu_);
  return by_epoch_.empty() ? 0 : static_cast<std::uint32_t>(by_epoch_.size() - 1);
}

namespace {

const std::vector<std::uint32_t>& outgoing_set(const Partition& p, Phase phase, std::uint32_t k) {
  return phase == Phase::Forward ? p.send_sets[k] : p.recv_sets[k];
}

const std::vector<std::uint32_t>& incoming_set(const Partition& p, Phase phase, std::uint32_t k) {
  return phase == Phase::Forward ? p.recv_sets[k] : p.send_sets[k];
}

}  // namespace

void send_exchange(Transport& transport, const Partition& part, const MessageTag& tag,
                   const std::vector<DenseMatrix>& outgoing, const QuantConfig& cfg,
                   std::uint64_t seed) {
  if (outgoing.size() != part.num_partitions) {
    throw ProtocolError("exchange: need one outgoing matrix per partition");
  }
  RngStream rng(StreamKey{.seed = seed,
                          .partition = part.id,
                          .epoch = tag.epoch,
                          .layer = tag.layer,
                          .phase = tag.phase,
                          .domain = StreamDomain::Quantize});
  for (std::uint32_t k = 0; k < part.num_partitions; ++k) {
    const auto& rows = outgoing_set(part, tag.phase, k);
    if (k == part.id || rows.empty()) continue;
    const DenseMatrix& m = outgoing[k];
    if (m.rows() != rows.size()) {
      throw ProtocolError("exchange: partition " + std::to_string(part.id) + " has " +
                          std::to_string(m.rows()) + " rows for peer " + std::to_string(k) +
                          ", expected " + std::to_string(rows.size()));
    }
    Message msg;
    msg.src = static_cast<std::uint16_t>(part.id);
    msg.dst = static_cast<std::uint16_t>(k);
    msg.tag = tag;
    msg.block = quantize_rows(m, cfg, rng);
    rng.skip(m.size());
    transport.send(msg);
  }
}

std::vector<DenseMatrix> receive_exchange(Transport& transport, const Partition& part,
                                          const MessageTag& tag, std::size_t dim) {
  std::vector<DenseMatrix> received(part.num_partitions);
  for (std::uint32_t k = 0; k < part.num_partitions; ++k) {
    const auto& rows = incoming_set(part, tag.phase, k);
    if (k == part.id || rows.empty()) continue;
    Message msg = transport.receive(part.id, k, tag);
    if (msg.block.num_rows != rows.size() || msg.block.dim != dim) {
      throw ProtocolError("exchange: block from partition " + std::to_string(k) + " is " +
                          std::to_string(msg.block.num_rows) + "x" +
                          std::to_string(msg.block.dim) + ", expected " +
                          std::to_string(rows.size()) + "x" + std::to_string(dim));
    }
    received[k] = dequantize_rows(msg.block);
  }
  return received;
}

std::vector<DenseMatrix> exchange(Transport& transport, const Partition& part,
                                  const MessageTag& tag, const std::vector<DenseMatrix>& outgoing,
                                  const QuantConfig& cfg, std::uint64_t seed) {
  std::size_t dim = 0;
  for (const auto& m : outgoing) dim = std::max(dim, m.cols());
  send_exchange(transport, part, tag, outgoing, cfg, seed);
  return receive_exchange(transport, part, tag, dim);
}

}  // namespace halobit
