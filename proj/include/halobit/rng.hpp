#pragma once

#include <cstdint>

namespace halobit {

enum class Phase : std::uint8_t { Forward = 0, Backward = 1 };

// What a stream is used for. Streams from different domains never collide
// even when the remaining key fields agree.
enum class StreamDomain : std::uint8_t {
  Quantize = 0,
  Dropout = 1,
  WeightInit = 2,
  GraphEdges = 3,
  FeatureNoise = 4,
  MaskSplit = 5,
  Partition = 6,
};

struct StreamKey {
  std::uint64_t seed = 0;
  std::uint32_t partition = 0;
  std::uint32_t epoch = 0;
  std::uint32_t layer = 0;
  Phase phase = Phase::Forward;
  StreamDomain domain = StreamDomain::Quantize;
};

inline constexpr std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based uniform stream. Value i depends only on (key, i), so a
// stream can be consumed sequentially with next() or indexed directly with
// at(), and parallel consumers stay bit-identical to a serial one.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(const StreamKey& key) : base_(derive(key)) {}

  static constexpr std::uint64_t derive(const StreamKey& k) {
    std::uint64_t h = mix64(k.seed);
    h = mix64(h ^ (static_cast<std::uint64_t>(k.domain) << 56));
    h = mix64(h ^ k.partition);
    h = mix64(h ^ (static_cast<std::uint64_t>(k.epoch) << 8));
    h = mix64(h ^ (static_cast<std::uint64_t>(k.layer) << 16));
    h = mix64(h ^ (static_cast<std::uint64_t>(k.phase) << 24));
    return h;
  }

  std::uint64_t bits_at(std::uint64_t index) const {
    return mix64(base_ ^ mix64(index));
  }
  // Uniform on [0, 1) with 53 random bits.
  double at(std::uint64_t index) const {
    return static_cast<double>(bits_at(index) >> 11) * 0x1.0p-53;
  }

  double next() { return at(counter_++); }
  std::uint64_t next_bits() { return bits_at(counter_++); }
  // Uniform integer in [0, n); n > 0. Multiply-shift, bias < n / 2^64.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_bits()) * n) >> 64);
  }

  std::uint64_t counter() const { return counter_; }
  void skip(std::uint64_t n) { counter_ += n; }

 private:
  std::uint64_t base_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace halobit
