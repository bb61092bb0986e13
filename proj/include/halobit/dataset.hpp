#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include "halobit/graph.hpp"

namespace halobit {

// Dataset directory layout (format version 1):
//   meta.json     {"num_nodes": N, "feature_dim": d, "num_classes": C}
//   edges.tsv     one "src<TAB>dst" pair of integers per line
//   features.f32  N x d little-endian float32, row-major
//   labels.u32    N little-endian uint32 class ids
//   masks.u8      N bytes: 0 = unused, 1 = train, 2 = val, 3 = test
// Edges are symmetrized on load; features are promoted to double.
Graph load_dataset(const std::filesystem::path& dir);
void save_dataset(const Graph& g, const std::filesystem::path& dir);

struct SbmSpec {
  std::uint32_t nodes_per_community = 125;
  std::uint32_t communities = 4;
  double p_in = 0.15;
  double p_out = 0.01;
  std::uint32_t feature_dim = 32;
  double feature_noise = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Parses "sbm:k=4,n=125,p_in=0.15,p_out=0.01,d=32,noise=1.0,seed=7". Every
// key is optional; `default_seed` is used when seed is absent.
SbmSpec parse_sbm_spec(std::string_view text, std::uint64_t default_seed);

// Node i belongs to community i / nodes_per_community. Every unordered pair
// is an edge independently with p_in (same community) or p_out. Features
// are one-hot(community) tiled to feature_dim plus N(0, noise^2); splits
// are 60/20/20 over a seeded shuffle.
Graph generate_sbm(const SbmSpec& spec);

}  // namespace halobit
