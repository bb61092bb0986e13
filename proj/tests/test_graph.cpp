#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "halobit/dataset.hpp"
#include "halobit/error.hpp"
#include "halobit/graph.hpp"

using namespace halobit;

namespace {

Graph make_graph(std::uint32_t n, std::vector<std::pair<NodeId, NodeId>> undirected) {
  Graph g;
  g.num_nodes = n;
  g.num_classes = 2;
  for (auto [a, b] : undirected) g.edges.push_back({a, b});
  symmetrize(g);
  g.features = DenseMatrix(n, 2, 1.0);
  g.labels.assign(n, 0);
  g.splits.assign(n, NodeSplit::Train);
  return g;
}

Graph path(std::uint32_t n) {
  std::vector<std::pair<NodeId, NodeId>> e;
  for (NodeId i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return make_graph(n, e);
}

Graph sbm(std::uint64_t seed) {
  SbmSpec s;
  s.nodes_per_community = 25;
  s.communities = 4;
  s.p_in = 0.2;
  s.p_out = 0.03;
  s.feature_dim = 8;
  s.seed = seed;
  return generate_sbm(s);
}

}  // namespace

TEST_CASE("normalize: single node and single edge") {
  CHECK(normalize_adjacency(make_graph(1, {})).to_dense() == DenseMatrix::from_rows({{1.0}}));
  CHECK(normalize_adjacency(make_graph(2, {{0, 1}})).to_dense() ==
        DenseMatrix::from_rows({{0.5, 0.5}, {0.5, 0.5}}));
}

TEST_CASE("normalize: 4-cycle rows sum to one") {
  const auto a = normalize_adjacency(make_graph(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}}));
  const auto d = a.to_dense();
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (double x : d.row(i)) s += x;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(d(i, i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  CHECK(d(0, 2) == 0.0);
}

TEST_CASE("normalize: duplicates and input self-loops are dropped") {
  auto g = make_graph(2, {{0, 1}, {0, 1}});
  g.edges.push_back({1, 1});
  CHECK(normalize_adjacency(g).to_dense() == DenseMatrix::from_rows({{0.5, 0.5}, {0.5, 0.5}}));
}

TEST_CASE("normalize: degree without self-loops") {
  // path 0-1-2: degrees 1, 2, 1 without the self-loop
  const auto d = normalize_adjacency(path(3), false).to_dense();
  CHECK(d(0, 0) == doctest::Approx(1.0));
  CHECK(d(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(d(1, 1) == doctest::Approx(0.5));
}

TEST_CASE("normalize: symmetric with values in (0, 1]") {
  const auto g = sbm(3);
  const auto d = normalize_adjacency(g).to_dense();
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    for (std::size_t j = 0; j < g.num_nodes; ++j) {
      CHECK(std::abs(d(i, j) - d(j, i)) <= 1e-15);
      CHECK(d(i, j) <= 1.0);
      CHECK(d(i, j) >= 0.0);
    }
}

TEST_CASE("mean adjacency") {
  const auto d = mean_adjacency(make_graph(3, {{0, 1}, {0, 2}})).to_dense();
  CHECK(d == DenseMatrix::from_rows({{0, 0.5, 0.5}, {1, 0, 0}, {1, 0, 0}}));
  CHECK(mean_adjacency(make_graph(1, {})).nnz() == 0);
}

TEST_CASE("partition: contiguous ranges") {
  const auto g = path(10);
  const auto plan = partition_nodes(g, 2, PartitionStrategy::Contiguous, 0);
  for (NodeId i = 0; i < 10; ++i) CHECK(plan.assignment[i] == (i < 5 ? 0u : 1u));
  const auto uneven = partition_nodes(path(7), 3, PartitionStrategy::Contiguous, 0);
  CHECK(uneven.assignment == std::vector<std::uint32_t>{0, 0, 0, 1, 1, 2, 2});
}

TEST_CASE("partition: bfs on a path") {
  const auto plan = partition_nodes(path(8), 2, PartitionStrategy::BfsBlocks, 0);
  for (NodeId i = 0; i < 8; ++i) CHECK(plan.assignment[i] == (i < 4 ? 0u : 1u));
  // Start in the middle: BFS order 3,2,4,1,5,0,6,7
  const auto mid = partition_nodes(path(8), 2, PartitionStrategy::BfsBlocks, 3);
  CHECK(mid.assignment == std::vector<std::uint32_t>{1, 0, 0, 0, 0, 1, 1, 1});
}

TEST_CASE("partition: bfs continues through disconnected components") {
  const auto g = make_graph(6, {{4, 5}, {0, 1}});
  const auto plan = partition_nodes(g, 3, PartitionStrategy::BfsBlocks, 4);
  // order 4,5,0,1,2,3
  CHECK(plan.assignment == std::vector<std::uint32_t>{1, 1, 2, 2, 0, 0});
}

TEST_CASE("partition: hash is deterministic and covers every node") {
  const auto g = sbm(1);
  const auto a = partition_nodes(g, 4, PartitionStrategy::Hash, 9);
  const auto b = partition_nodes(g, 4, PartitionStrategy::Hash, 9);
  CHECK(a.assignment == b.assignment);
  std::set<std::uint32_t> used(a.assignment.begin(), a.assignment.end());
  CHECK(used.size() == 4);
}

TEST_CASE("partition: errors") {
  const auto g = path(3);
  CHECK_THROWS_AS(partition_nodes(g, 4, PartitionStrategy::Contiguous, 0), ConfigError);
  CHECK_THROWS_AS(partition_nodes(g, 0, PartitionStrategy::Contiguous, 0), ConfigError);
  CHECK_THROWS_AS(parse_partition_strategy("metis"), ConfigError);
  CHECK(parse_partition_strategy("bfs_blocks") == PartitionStrategy::BfsBlocks);
  // Two nodes hashed into many partitions: some partition stays empty.
  bool any_empty = false;
  for (std::uint64_t seed = 0; seed < 20 && !any_empty; ++seed) {
    try {
      partition_nodes(path(2), 2, PartitionStrategy::Hash, seed);
    } catch (const ConfigError&) {
      any_empty = true;
    }
  }
  CHECK(any_empty);
}

TEST_CASE("single partition: no halo, block equals the adjacency") {
  const auto g = sbm(2);
  const auto adj = normalize_adjacency(g);
  const auto parts =
      build_partitions(g, adj, partition_nodes(g, 1, PartitionStrategy::Contiguous, 0));
  REQUIRE(parts.size() == 1);
  CHECK(parts[0].num_halo() == 0);
  CHECK(parts[0].adj_block == adj);
  CHECK(parts[0].features == g.features);
}

TEST_CASE("halo topology of the workflow figure") {
  // Partition 0 owns 6..8, partition 1 owns 3..5, partition 2 owns 0..2.
  const auto g = make_graph(9, {{4, 7}, {4, 1}, {3, 4}, {4, 5}, {0, 1}, {6, 7}, {5, 8}});
  PartitionPlan plan;
  plan.num_partitions = 3;
  plan.assignment = {2, 2, 2, 1, 1, 1, 0, 0, 0};
  const auto parts = build_partitions(g, normalize_adjacency(g), plan);
  const Partition& p1 = parts[1];
  CHECK(p1.local_nodes == std::vector<NodeId>{3, 4, 5});
  CHECK(p1.halo_nodes == std::vector<NodeId>{1, 7, 8});
  // node 4 (local row 1) needs node 7 from partition 0 and node 1 from partition 2
  std::set<NodeId> needed;
  for (auto e = p1.adj_block.row_ptr[1]; e < p1.adj_block.row_ptr[2]; ++e) {
    const NodeId v = p1.column_node(p1.adj_block.col_idx[e]);
    if (std::find(p1.local_nodes.begin(), p1.local_nodes.end(), v) == p1.local_nodes.end()) {
      needed.insert(v);
    }
  }
  CHECK(needed == std::set<NodeId>{1, 7});
  CHECK(plan.assignment[7] == 0);
  CHECK(plan.assignment[1] == 2);
  // halo slots: node 1 is slot 0 (from partition 2), nodes 7, 8 slots 1, 2 (from partition 0)
  CHECK(p1.recv_sets[0] == std::vector<std::uint32_t>{1, 2});
  CHECK(p1.recv_sets[2] == std::vector<std::uint32_t>{0});
  CHECK(p1.recv_sets[1].empty());
  // partition 1 sends node 4 (local 1) to partition 0 and 2; node 5 (local 2) to partition 0
  CHECK(p1.send_sets[0] == std::vector<std::uint32_t>{1, 2});
  CHECK(p1.send_sets[2] == std::vector<std::uint32_t>{1});
}

TEST_CASE("partition invariants on random graphs") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto g = sbm(seed);
    const auto adj = normalize_adjacency(g);
    for (auto strategy :
         {PartitionStrategy::Contiguous, PartitionStrategy::BfsBlocks, PartitionStrategy::Hash}) {
      const auto plan = partition_nodes(g, 4, strategy, seed);
      const auto parts = build_partitions(g, adj, plan);
      std::size_t total_local = 0;
      DenseMatrix rebuilt(g.num_nodes, g.num_nodes);
      for (const Partition& p : parts) {
        total_local += p.num_local();
        p.adj_block.validate();
        CHECK(p.adj_block.rows == p.num_local());
        CHECK(p.adj_block.cols == p.num_local() + p.num_halo());
        CHECK(std::is_sorted(p.local_nodes.begin(), p.local_nodes.end()));
        CHECK(std::is_sorted(p.halo_nodes.begin(), p.halo_nodes.end()));
        for (NodeId h : p.halo_nodes) CHECK(plan.assignment[h] != p.id);
        // recv sets partition the halo slots exactly, grouped by owner
        std::vector<int> seen(p.num_halo(), 0);
        for (std::uint32_t k = 0; k < 4; ++k)
          for (auto slot : p.recv_sets[k]) {
            ++seen[slot];
            CHECK(plan.assignment[p.halo_nodes[slot]] == k);
          }
        for (int s : seen) CHECK(s == 1);
        CHECK(p.adj_block_t == p.adj_block.transpose());
        const auto d = p.adj_block.to_dense();
        for (std::size_t r = 0; r < p.num_local(); ++r)
          for (std::size_t c = 0; c < d.cols(); ++c)
            rebuilt(p.local_nodes[r], p.column_node(static_cast<std::uint32_t>(c))) = d(r, c);
        for (std::size_t r = 0; r < p.num_local(); ++r) {
          CHECK(p.labels[r] == g.labels[p.local_nodes[r]]);
          CHECK(p.features(r, 0) == g.features(p.local_nodes[r], 0));
        }
      }
      CHECK(total_local == g.num_nodes);
      CHECK(rebuilt == adj.to_dense());
      // S_k on n equals R_n on k, as global ids
      for (std::uint32_t n = 0; n < 4; ++n)
        for (std::uint32_t k = 0; k < 4; ++k) {
          std::vector<NodeId> sent, received;
          for (auto i : parts[n].send_sets[k]) sent.push_back(parts[n].local_nodes[i]);
          for (auto s : parts[k].recv_sets[n]) received.push_back(parts[k].halo_nodes[s]);
          CHECK(sent == received);
        }
    }
  }
}

TEST_CASE("graph validation") {
  auto g = path(3);
  g.validate();
  g.edges.push_back({0, 5});
  CHECK_THROWS(g.validate());
  g = path(3);
  g.labels[1] = 7;
  CHECK_THROWS(g.validate());
  g = path(3);
  g.features = DenseMatrix(2, 2);
  CHECK_THROWS(g.validate());
  g = path(3);
  CHECK(g.count(NodeSplit::Train) == 3);
  CHECK(g.mask(NodeSplit::Val) == std::vector<std::uint8_t>{0, 0, 0});
}
