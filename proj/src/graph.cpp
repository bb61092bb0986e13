#include "halobit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "halobit/error.hpp"
#include "halobit/rng.hpp"

namespace halobit {

void Graph::validate() const {
  for (const Edge& e : edges) {
    if (e.src >= num_nodes || e.dst >= num_nodes) {
      throw ConfigError("graph edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                        ") has an endpoint >= num_nodes " + std::to_string(num_nodes));
    }
  }
  if (features.rows() != num_nodes) throw ConfigError("graph features rows != num_nodes");
  if (labels.size() != num_nodes) throw ConfigError("graph labels length != num_nodes");
  if (splits.size() != num_nodes) throw ConfigError("graph split length != num_nodes");
  for (std::uint32_t y : labels) {
    if (y >= num_classes) throw ConfigError("graph label " + std::to_string(y) + " >= num_classes");
  }
}

std::vector<std::uint8_t> Graph::mask(NodeSplit which) const {
  std::vector<std::uint8_t> m(splits.size());
  for (std::size_t i = 0; i < splits.size(); ++i) m[i] = splits[i] == which;
  return m;
}

std::size_t Graph::count(NodeSplit which) const {
  return static_cast<std::size_t>(std::count(splits.begin(), splits.end(), which));
}

void symmetrize(Graph& g) {
  const std::size_t n = g.edges.size();
  g.edges.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) g.edges.push_back({g.edges[i].dst, g.edges[i].src});
}

namespace {

// In-neighbor lists (j -> i stored under i), sorted, deduplicated, without
// self-loops.
std::vector<std::vector<NodeId>> in_neighbors(const Graph& g) {
  std::vector<std::vector<NodeId>> nbrs(g.num_nodes);
  for (const Edge& e : g.edges) {
    if (e.src >= g.num_nodes || e.dst >= g.num_nodes) {
      throw ConfigError("edge endpoint out of range");
    }
    if (e.src != e.dst) nbrs[e.dst].push_back(e.src);
  }
  for (auto& list : nbrs) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return nbrs;
}

}  // namespace

CsrMatrix normalize_adjacency(const Graph& g, bool degree_with_self_loops) {
  const auto nbrs = in_neighbors(g);
  const std::uint32_t n = g.num_nodes;
  std::vector<double> deg(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(nbrs[i].size());
    deg[i] = degree_with_self_loops ? d + 1.0 : std::max(d, 1.0);
  }
  // The degree product is an exact integer, so each entry is a single
  // correctly rounded 1/sqrt.
  auto weight = [&](NodeId i, NodeId j) { return 1.0 / std::sqrt(deg[i] * deg[j]); };
  CsrMatrix a;
  a.rows = a.cols = n;
  a.row_ptr.assign(n + 1, 0);
  for (std::uint32_t i = 0; i < n; ++i) {
    // Merge the self-loop into the sorted neighbor list.
    bool self_done = false;
    for (NodeId j : nbrs[i]) {
      if (!self_done && j > i) {
        a.col_idx.push_back(i);
        a.values.push_back(weight(i, i));
        self_done = true;
      }
      a.col_idx.push_back(j);
      a.values.push_back(weight(i, j));
    }
    if (!self_done) {
      a.col_idx.push_back(i);
      a.values.push_back(weight(i, i));
    }
    a.row_ptr[i + 1] = a.col_idx.size();
  }
  return a;
}

CsrMatrix mean_adjacency(const Graph& g) {
  const auto nbrs = in_neighbors(g);
  CsrMatrix a;
  a.rows = a.cols = g.num_nodes;
  a.row_ptr.assign(g.num_nodes + 1, 0);
  for (std::uint32_t i = 0; i < g.num_nodes; ++i) {
    const double w = nbrs[i].empty() ? 0.0 : 1.0 / static_cast<double>(nbrs[i].size());
    for (NodeId j : nbrs[i]) {
      a.col_idx.push_back(j);
      a.values.push_back(w);
    }
    a.row_ptr[i + 1] = a.col_idx.size();
  }
  return a;
}

PartitionStrategy parse_partition_strategy(std::string_view name) {
  if (name == "contiguous") return PartitionStrategy::Contiguous;
  if (name == "bfs" || name == "bfs_blocks") return PartitionStrategy::BfsBlocks;
  if (name == "hash") return PartitionStrategy::Hash;
  throw ConfigError("unknown partition strategy '" + std::string(name) +
                    "' (expected contiguous, bfs or hash)");
}

std::string_view to_string(PartitionStrategy s) {
  switch (s) {
    case PartitionStrategy::Contiguous: return "contiguous";
    case PartitionStrategy::BfsBlocks: return "bfs";
    case PartitionStrategy::Hash: return "hash";
  }
  return "?";
}

void PartitionPlan::validate(std::uint32_t num_nodes) const {
  if (num_partitions == 0) throw ConfigError("partition plan has zero partitions");
  if (assignment.size() != num_nodes) throw ConfigError("partition plan does not cover all nodes");
  std::vector<std::size_t> sizes(num_partitions, 0);
  for (std::uint32_t p : assignment) {
    if (p >= num_partitions) throw ConfigError("partition id out of range in plan");
    ++sizes[p];
  }
  for (std::uint32_t p = 0; p < num_partitions; ++p) {
    if (sizes[p] == 0) throw ConfigError("partition " + std::to_string(p) + " is empty");
  }
}

namespace {

// Splits an ordering of nodes into n equal ranges; the first (size % n)
// ranges get one extra node.
void assign_ranges(const std::vector<NodeId>& order, std::uint32_t n, PartitionPlan& plan) {
  const std::size_t total = order.size();
  const std::size_t base = total / n;
  const std::size_t extra = total % n;
  std::size_t pos = 0;
  for (std::uint32_t p = 0; p < n; ++p) {
    const std::size_t len = base + (p < extra ? 1 : 0);
    for (std::size_t i = 0; i < len; ++i) plan.assignment[order[pos++]] = p;
  }
}

std::vector<NodeId> bfs_order(const Graph& g, NodeId start) {
  std::vector<std::vector<NodeId>> adj(g.num_nodes);
  for (const Edge& e : g.edges) {
    if (e.src == e.dst) continue;
    adj[e.src].push_back(e.dst);
    adj[e.dst].push_back(e.src);
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  std::vector<NodeId> order;
  order.reserve(g.num_nodes);
  std::vector<bool> seen(g.num_nodes, false);
  std::deque<NodeId> queue;
  NodeId next_root = 0;
  auto visit_from = [&](NodeId root) {
    seen[root] = true;
    queue.push_back(root);
    while (!queue.empty()) {
      const NodeId u = queue.front();
      queue.pop_front();
      order.push_back(u);
      for (NodeId v : adj[u]) {
        if (!seen[v]) {
          seen[v] = true;
          queue.push_back(v);
        }
      }
    }
  };
  visit_from(start);
  while (order.size() < g.num_nodes) {
    while (seen[next_root]) ++next_root;
    visit_from(next_root);
  }
  return order;
}

}  // namespace

PartitionPlan partition_nodes(const Graph& g, std::uint32_t n, PartitionStrategy strategy,
                              std::uint64_t seed) {
  if (n == 0) throw ConfigError("number of partitions must be >= 1");
  if (n > g.num_nodes) {
    throw ConfigError("cannot split " + std::to_string(g.num_nodes) + " nodes into " +
                      std::to_string(n) + " partitions");
  }
  PartitionPlan plan;
  plan.num_partitions = n;
  plan.assignment.assign(g.num_nodes, 0);
  switch (strategy) {
    case PartitionStrategy::Contiguous: {
      std::vector<NodeId> order(g.num_nodes);
      for (NodeId i = 0; i < g.num_nodes; ++i) order[i] = i;
      assign_ranges(order, n, plan);
      break;
    }
    case PartitionStrategy::BfsBlocks:
      assign_ranges(bfs_order(g, static_cast<NodeId>(seed % g.num_nodes)), n, plan);
      break;
    case PartitionStrategy::Hash: {
      const std::uint64_t salt = mix64(seed ^ 0x68616C6F62697400ULL);
      for (NodeId i = 0; i < g.num_nodes; ++i) {
        plan.assignment[i] = static_cast<std::uint32_t>(mix64(salt ^ i) % n);
      }
      break;
    }
  }
  plan.validate(g.num_nodes);
  return plan;
}

std::vector<std::uint8_t> Partition::mask(NodeSplit which) const {
  std::vector<std::uint8_t> m(splits.size());
  for (std::size_t i = 0; i < splits.size(); ++i) m[i] = splits[i] == which;
  return m;
}

Partition build_partition(const Graph& g, const CsrMatrix& adj, const PartitionPlan& plan,
                          std::uint32_t n) {
  plan.validate(g.num_nodes);
  if (n >= plan.num_partitions) throw ConfigError("partition id out of range");
  if (adj.rows != g.num_nodes || adj.cols != g.num_nodes) {
    throw ShapeError("build_partition: adjacency does not match the graph");
  }
  const std::uint32_t parts = plan.num_partitions;
  Partition p;
  p.id = n;
  p.num_partitions = parts;

  constexpr std::uint32_t kNone = ~0u;
  std::vector<std::uint32_t> local_index(g.num_nodes, kNone);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    if (plan.assignment[v] == n) {
      local_index[v] = static_cast<std::uint32_t>(p.local_nodes.size());
      p.local_nodes.push_back(v);
    }
  }

  // Halo: non-local in-neighbors of local rows. Send sets: local nodes that
  // appear as in-neighbors of some row owned by peer k.
  std::vector<bool> is_halo(g.num_nodes, false);
  std::vector<std::vector<bool>> needed_by(parts, std::vector<bool>());
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    const std::uint32_t owner = plan.assignment[v];
    for (std::size_t e = adj.row_ptr[v]; e < adj.row_ptr[v + 1]; ++e) {
      const NodeId u = adj.col_idx[e];
      const std::uint32_t u_owner = plan.assignment[u];
      if (owner == n && u_owner != n) is_halo[u] = true;
      if (owner != n && u_owner == n) {
        auto& flags = needed_by[owner];
        if (flags.empty()) flags.assign(p.local_nodes.size(), false);
        flags[local_index[u]] = true;
      }
    }
  }
  std::vector<std::uint32_t> halo_slot(g.num_nodes, kNone);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    if (is_halo[v]) {
      halo_slot[v] = static_cast<std::uint32_t>(p.halo_nodes.size());
      p.halo_nodes.push_back(v);
    }
  }

  p.send_sets.assign(parts, {});
  p.recv_sets.assign(parts, {});
  for (std::uint32_t k = 0; k < parts; ++k) {
    if (k == n || needed_by[k].empty()) continue;
    for (std::uint32_t li = 0; li < p.local_nodes.size(); ++li) {
      if (needed_by[k][li]) p.send_sets[k].push_back(li);
    }
  }
  for (std::uint32_t slot = 0; slot < p.halo_nodes.size(); ++slot) {
    p.recv_sets[plan.assignment[p.halo_nodes[slot]]].push_back(slot);
  }

  const std::uint32_t num_local = static_cast<std::uint32_t>(p.local_nodes.size());
  CsrMatrix& blk = p.adj_block;
  blk.rows = num_local;
  blk.cols = num_local + p.halo_nodes.size();
  blk.row_ptr.assign(num_local + 1, 0);
  std::vector<std::pair<std::uint32_t, double>> row;
  for (std::uint32_t li = 0; li < num_local; ++li) {
    const NodeId v = p.local_nodes[li];
    row.clear();
    for (std::size_t e = adj.row_ptr[v]; e < adj.row_ptr[v + 1]; ++e) {
      const NodeId u = adj.col_idx[e];
      const std::uint32_t col =
          local_index[u] != kNone ? local_index[u] : num_local + halo_slot[u];
      row.emplace_back(col, adj.values[e]);
    }
    std::sort(row.begin(), row.end());
    for (const auto& [col, val] : row) {
      blk.col_idx.push_back(col);
      blk.values.push_back(val);
    }
    blk.row_ptr[li + 1] = blk.col_idx.size();
  }
  blk.validate();
  p.adj_block_t = blk.transpose();

  p.features = gather_rows(g.features, p.local_nodes);
  p.labels.reserve(num_local);
  p.splits.reserve(num_local);
  for (NodeId v : p.local_nodes) {
    p.labels.push_back(g.labels[v]);
    p.splits.push_back(g.splits[v]);
  }
  return p;
}

std::vector<Partition> build_partitions(const Graph& g, const CsrMatrix& adj,
                                        const PartitionPlan& plan) {
  std::vector<Partition> parts;
  parts.reserve(plan.num_partitions);
  for (std::uint32_t n = 0; n < plan.num_partitions; ++n) {
    parts.push_back(build_partition(g, adj, plan, n));
  }
  return parts;
}

}  // namespace halobit
