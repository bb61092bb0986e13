#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <chrono>
#include <future>
#include <thread>

#include "halobit/error.hpp"
#include "halobit/graph.hpp"
#include "halobit/transport.hpp"

using namespace halobit;
using namespace std::chrono_literals;

namespace {

// Nodes 0..3 on partition 0, 4..7 on partition 1; edges 0-4, 1-5, 2-6, so
// three rows cross in each direction.
std::vector<Partition> two_parts() {
  Graph g;
  g.num_nodes = 8;
  g.num_classes = 1;
  g.edges = {{0, 4}, {1, 5}, {2, 6}, {0, 1}};
  symmetrize(g);
  g.features = DenseMatrix(8, 1);
  g.labels.assign(8, 0);
  g.splits.assign(8, NodeSplit::Train);
  PartitionPlan plan;
  plan.num_partitions = 2;
  plan.assignment = {0, 0, 0, 0, 1, 1, 1, 1};
  return build_partitions(g, normalize_adjacency(g), plan);
}

DenseMatrix ramp(std::size_t r, std::size_t c, double offset) {
  DenseMatrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = offset + 0.37 * static_cast<double>(i * c + j);
  return m;
}

}  // namespace

TEST_CASE("message envelope roundtrip") {
  Message m;
  m.src = 3;
  m.dst = 1;
  m.tag = {7, 2, Phase::Backward};
  m.block = quantize_rows(ramp(2, 5, 0.0), QuantConfig(2), RngStream(StreamKey{}));
  const auto bytes = encode_message(m);
  CHECK(bytes.size() == Message::kEnvelopeBytes + encode_block(m.block).size());
  CHECK(bytes[0] == 'H');
  CHECK(bytes[3] == '1');
  const auto back = decode_message(bytes);
  CHECK(back.src == 3);
  CHECK(back.dst == 1);
  CHECK(back.tag == m.tag);
  CHECK(back.block.payload == m.block.payload);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_message(bad), CodecError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_message(bad), CodecError);
}

TEST_CASE("single partition exchange is empty") {
  Graph g;
  g.num_nodes = 2;
  g.num_classes = 1;
  g.edges = {{0, 1}, {1, 0}};
  g.features = DenseMatrix(2, 3);
  g.labels = {0, 0};
  g.splits = {NodeSplit::Train, NodeSplit::Train};
  const auto parts = build_partitions(g, normalize_adjacency(g),
                                      partition_nodes(g, 1, PartitionStrategy::Contiguous, 0));
  Transport t(1);
  const auto got = exchange(t, parts[0], {1, 1, Phase::Forward}, {DenseMatrix(0, 3)},
                            QuantConfig(1), 0);
  REQUIRE(got.size() == 1);
  CHECK(got[0].empty());
  CHECK(t.totals() == TrafficCounters{});
  const std::vector<DenseMatrix> grads{DenseMatrix(2, 2, 1.5)};
  CHECK(t.all_reduce_sum(0, 1, grads) == grads);
  t.barrier(0);
}

TEST_CASE("two partitions: three rows at one bit") {
  const auto parts = two_parts();
  REQUIRE(parts[0].send_sets[1].size() == 3);
  Transport t(2);
  const MessageTag tag{1, 1, Phase::Forward};
  const DenseMatrix out0 = ramp(3, 16, 0.0);
  const DenseMatrix out1 = ramp(3, 16, 5.0);
  auto f0 = std::async(std::launch::async, [&] {
    return exchange(t, parts[0], tag, {DenseMatrix(0, 16), out0}, QuantConfig(1), 42);
  });
  auto f1 = std::async(std::launch::async, [&] {
    return exchange(t, parts[1], tag, {out1, DenseMatrix(0, 16)}, QuantConfig(1), 42);
  });
  const auto r0 = f0.get();
  const auto r1 = f1.get();
  CHECK(r1[0].rows() == 3);
  CHECK(r1[0].cols() == 16);
  CHECK(r0[1].rows() == 3);
  const auto p0 = t.partition_totals(0);
  CHECK(p0.main_bytes == 6);
  CHECK(p0.metadata_bytes == 24);
  CHECK(p0.header_bytes == 12);
  CHECK(p0.messages == 1);
  CHECK(p0.rows == 3);
  CHECK(t.epoch_totals(1).main_bytes == 12);
  CHECK(t.epoch_totals(2) == TrafficCounters{});
  // one-bit values are each row's min or max
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      const double v = r1[0](i, j);
      CHECK((v == doctest::Approx(out0(i, 0)) || v == doctest::Approx(out0(i, 15))));
    }
  t.check_drained();
}

TEST_CASE("passthrough exchange is bit exact, both phases") {
  const auto parts = two_parts();
  Transport t(2);
  const DenseMatrix fwd0 = ramp(3, 4, 0.1);
  const DenseMatrix fwd1 = ramp(3, 4, -2.0);
  const DenseMatrix bwd0 = ramp(3, 4, 9.0);  // partition 0's halo rows go back to partition 1
  const DenseMatrix bwd1 = ramp(3, 4, 3.0);
  auto run = [&](std::uint32_t n, Phase phase, const DenseMatrix& m) {
    std::vector<DenseMatrix> out(2, DenseMatrix(0, 4));
    out[1 - n] = m;
    return exchange(t, parts[n], {2, 1, phase}, out, QuantConfig(32), 1);
  };
  auto a = std::async(std::launch::async, run, 0, Phase::Forward, fwd0);
  auto b = std::async(std::launch::async, run, 1, Phase::Forward, fwd1);
  CHECK(b.get()[0] == fwd0);
  CHECK(a.get()[1] == fwd1);
  auto c = std::async(std::launch::async, run, 0, Phase::Backward, bwd0);
  auto d = std::async(std::launch::async, run, 1, Phase::Backward, bwd1);
  CHECK(d.get()[0] == bwd0);
  CHECK(c.get()[1] == bwd1);
  const auto tot = t.totals();
  CHECK(tot.main_bytes == 4 * 3 * 4 * 4);
  CHECK(tot.metadata_bytes == 0);
  CHECK(tot.messages == 4);
  t.check_drained();
}

TEST_CASE("wrong outgoing row count") {
  const auto parts = two_parts();
  Transport t(2);
  CHECK_THROWS_AS(send_exchange(t, parts[0], {1, 1, Phase::Forward},
                                {DenseMatrix(0, 2), DenseMatrix(2, 2)}, QuantConfig(1), 0),
                  ProtocolError);
}

TEST_CASE("duplicate and missing messages") {
  Transport t(2, 50ms);
  Message m;
  m.src = 0;
  m.dst = 1;
  m.tag = {1, 1, Phase::Forward};
  m.block = quantize_rows(ramp(1, 3, 0), QuantConfig(1), RngStream());
  t.send(m);
  CHECK_THROWS_AS(t.send(m), ProtocolError);
  CHECK_THROWS_AS(t.check_drained(), ProtocolError);
  // the right source, a different tag: never arrives
  try {
    t.receive(1, 0, {1, 2, Phase::Forward});
    FAIL("expected a timeout");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("missing expected message") != std::string::npos);
  }
  CHECK(t.poisoned());
  CHECK_THROWS_AS(t.receive(1, 0, m.tag), ProtocolError);
}

TEST_CASE("all-reduce sums in partition order") {
  Transport t(3);
  std::vector<std::future<std::vector<DenseMatrix>>> fs;
  for (std::uint32_t n = 0; n < 3; ++n) {
    fs.push_back(std::async(std::launch::async, [&t, n] {
      return t.all_reduce_sum(n, 1, {DenseMatrix(2, 2, static_cast<double>(n))});
    }));
  }
  for (auto& f : fs) CHECK(f.get()[0] == DenseMatrix(2, 2, 3.0));
  CHECK(t.partition_totals(1).allreduce_bytes == 16);
  CHECK(t.totals().allreduce_bytes == 48);
}

TEST_CASE("all-reduce is bit reproducible") {
  auto once = [] {
    Transport t(4);
    std::vector<std::future<std::vector<DenseMatrix>>> fs;
    for (std::uint32_t n = 0; n < 4; ++n) {
      fs.push_back(std::async(std::launch::async, [&t, n] {
        std::this_thread::sleep_for(std::chrono::milliseconds((3 - n) * 3));
        return t.all_reduce_sum(n, 1, {ramp(3, 3, 0.1 * (n + 1)), DenseMatrix(1, 1, 1e-17 * n)});
      }));
    }
    std::vector<std::vector<DenseMatrix>> out;
    for (auto& f : fs) out.push_back(f.get());
    return out;
  };
  const auto a = once();
  const auto b = once();
  CHECK(a == b);
  for (const auto& r : a) CHECK(r == a[0]);
}

TEST_CASE("all-reduce shape mismatch") {
  Transport t(2);
  auto f0 = std::async(std::launch::async, [&] { return t.all_reduce_sum(0, 1, {DenseMatrix(2, 2)}); });
  auto f1 = std::async(std::launch::async, [&] { return t.all_reduce_sum(1, 1, {DenseMatrix(2, 3)}); });
  CHECK_THROWS_AS(f0.get(), ProtocolError);
  CHECK_THROWS_AS(f1.get(), ProtocolError);
}

TEST_CASE("barrier releases all workers together") {
  Transport t(4);
  std::atomic<int> arrived{0};
  std::atomic<int> early{0};
  std::vector<std::thread> workers;
  for (std::uint32_t n : {2u, 0u, 3u, 1u}) {
    workers.emplace_back([&, n] {
      std::this_thread::sleep_for(std::chrono::milliseconds(5 * n));
      ++arrived;
      t.barrier(n);
      if (arrived.load() != 4) ++early;
    });
  }
  for (auto& w : workers) w.join();
  CHECK(early.load() == 0);
  CHECK(t.barrier_generation() == 1);
}

TEST_CASE("poison aborts waiting workers") {
  Transport t(3);
  std::atomic<int> aborted{0};
  std::vector<std::thread> waiters;
  for (std::uint32_t n : {0u, 1u}) {
    waiters.emplace_back([&, n] {
      try {
        t.barrier(n);
      } catch (const ProtocolError& e) {
        if (std::string(e.what()).find("worker 2 failed") != std::string::npos) ++aborted;
      }
    });
  }
  std::this_thread::sleep_for(20ms);
  t.poison("worker 2 failed");
  t.poison("second reason is ignored");
  for (auto& w : waiters) w.join();
  CHECK(aborted.load() == 2);
  CHECK_THROWS_AS(t.all_reduce_sum(0, 1, {}), ProtocolError);
}

TEST_CASE("conservation of rows") {
  const auto parts = [] {
    Graph g;
    g.num_nodes = 30;
    g.num_classes = 1;
    for (NodeId i = 0; i < 30; ++i) g.edges.push_back({i, (i * 7 + 3) % 30});
    symmetrize(g);
    g.features = DenseMatrix(30, 1);
    g.labels.assign(30, 0);
    g.splits.assign(30, NodeSplit::Train);
    return build_partitions(g, normalize_adjacency(g),
                            partition_nodes(g, 3, PartitionStrategy::Hash, 5));
  }();
  Transport t(3);
  std::vector<std::future<std::vector<DenseMatrix>>> fs;
  for (std::uint32_t n = 0; n < 3; ++n) {
    fs.push_back(std::async(std::launch::async, [&, n] {
      std::vector<DenseMatrix> out;
      for (std::uint32_t k = 0; k < 3; ++k) out.push_back(ramp(parts[n].send_sets[k].size(), 8, n));
      return exchange(t, parts[n], {1, 1, Phase::Forward}, out, QuantConfig(4), 3);
    }));
  }
  std::size_t received = 0;
  for (auto& f : fs)
    for (const auto& m : f.get()) received += m.rows();
  CHECK(received == t.totals().rows);
  std::size_t expected_main = 0;
  for (const auto& p : parts)
    for (const auto& set : p.send_sets) expected_main += payload_bytes(set.size(), 8, 4);
  CHECK(t.totals().main_bytes == expected_main);
}
