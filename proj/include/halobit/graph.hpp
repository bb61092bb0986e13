#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "halobit/linalg.hpp"

namespace halobit {

using NodeId = std::uint32_t;

enum class NodeSplit : std::uint8_t { None = 0, Train = 1, Val = 2, Test = 3 };

struct Edge {
  NodeId src;
  NodeId dst;
  auto operator<=>(const Edge&) const = default;
};

// Full input graph. Undirected graphs carry both directions of every edge.
// A node belongs to at most one split, so the three masks are disjoint by
// construction.
struct Graph {
  std::uint32_t num_nodes = 0;
  std::uint32_t num_classes = 0;
  std::vector<Edge> edges;
  DenseMatrix features;
  std::vector<std::uint32_t> labels;
  std::vector<NodeSplit> splits;

  void validate() const;
  std::vector<std::uint8_t> mask(NodeSplit which) const;
  std::size_t count(NodeSplit which) const;
  std::size_t feature_dim() const { return features.cols(); }
};

// Adds the reverse of every edge; duplicates are removed later by the
// adjacency builders.
void symmetrize(Graph& g);

// D^-1/2 (A + I) D^-1/2 with A[i][j] = 1 for every edge j -> i. Input
// self-loops and duplicate edges are dropped before the canonical self-loop
// is added. When degree_with_self_loops is false, D counts A alone (isolated
// nodes are clamped to degree 1).
CsrMatrix normalize_adjacency(const Graph& g, bool degree_with_self_loops = true);

// Row-mean aggregation matrix: M[i][j] = 1 / indeg(i) for every in-neighbor
// j != i. Isolated rows are empty.
CsrMatrix mean_adjacency(const Graph& g);

enum class PartitionStrategy { Contiguous, BfsBlocks, Hash };

PartitionStrategy parse_partition_strategy(std::string_view name);
std::string_view to_string(PartitionStrategy s);

struct PartitionPlan {
  std::uint32_t num_partitions = 1;
  std::vector<std::uint32_t> assignment;  // node -> partition id

  void validate(std::uint32_t num_nodes) const;
};

// Deterministic for fixed (strategy, seed). BfsBlocks starts from node
// seed % num_nodes; Hash fails if any partition ends up empty.
PartitionPlan partition_nodes(const Graph& g, std::uint32_t n, PartitionStrategy strategy,
                              std::uint64_t seed);

// One worker's slice of the graph.
//
// Columns of adj_block are the local nodes (sorted by global id) followed by
// the halo nodes (sorted by global id). send_sets[k] lists local row indices
// peer k needs; recv_sets[k] lists the halo slots peer k fills. Both are in
// ascending global-id order, which is the order rows travel on the wire.
struct Partition {
  std::uint32_t id = 0;
  std::uint32_t num_partitions = 1;
  std::vector<NodeId> local_nodes;
  std::vector<NodeId> halo_nodes;
  std::vector<std::vector<std::uint32_t>> send_sets;
  std::vector<std::vector<std::uint32_t>> recv_sets;
  CsrMatrix adj_block;
  CsrMatrix adj_block_t;  // transpose, used to route feature gradients
  DenseMatrix features;
  std::vector<std::uint32_t> labels;
  std::vector<NodeSplit> splits;

  std::size_t num_local() const { return local_nodes.size(); }
  std::size_t num_halo() const { return halo_nodes.size(); }
  std::vector<std::uint8_t> mask(NodeSplit which) const;
  NodeId column_node(std::uint32_t col) const {
    return col < local_nodes.size() ? local_nodes[col] : halo_nodes[col - local_nodes.size()];
  }
};

Partition build_partition(const Graph& g, const CsrMatrix& adj, const PartitionPlan& plan,
                          std::uint32_t n);
std::vector<Partition> build_partitions(const Graph& g, const CsrMatrix& adj,
                                        const PartitionPlan& plan);

}  // namespace halobit
