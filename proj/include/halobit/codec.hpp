#pragma once

// Low-bit codec for halo rows: per-row affine quantization with stochastic
// rounding, LSB-first bit packing, and dequantization.
//
// Wire layout of a block (little-endian):
//   u8 version (=1) | u8 bits | u16 reserved | u32 num_rows | u32 dim
//   num_rows x { f32 min, f32 scale }     (absent in passthrough mode)
//   payload: num_rows x ceil(dim * bits / 8) packed code bytes
//
// Passthrough (bits == 32) carries the raw doubles so full-precision runs are
// bit-identical to single-machine training; its volume is still *accounted*
// at 4 bytes per element by payload_bytes(), the fp32 baseline that the
// low-bit rates are compared against.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "halobit/linalg.hpp"
#include "halobit/rng.hpp"

namespace halobit {

class QuantConfig {
 public:
  static constexpr unsigned kPassthroughBits = 32;

  explicit QuantConfig(unsigned bits = 1);

  unsigned bits() const { return bits_; }
  bool passthrough() const { return bits_ == kPassthroughBits; }
  // B = 2^b - 1, the largest code. Zero in passthrough mode.
  std::uint32_t levels() const { return levels_; }

  static bool valid_bits(unsigned bits);

 private:
  unsigned bits_;
  std::uint32_t levels_;
};

struct QuantizedBlock {
  static constexpr std::uint8_t kVersion = 1;
  static constexpr std::size_t kHeaderBytes = 12;

  std::uint32_t num_rows = 0;
  std::uint32_t dim = 0;
  std::uint8_t bits = 1;
  std::vector<std::uint8_t> payload;
  std::vector<float> row_min;
  std::vector<float> row_scale;

  bool passthrough() const { return bits == QuantConfig::kPassthroughBits; }
  // Throws CodecError if any structural invariant is broken.
  void validate() const;
};

QuantizedBlock quantize_rows(const DenseMatrix& m, const QuantConfig& cfg, const RngStream& rng);
DenseMatrix dequantize_rows(const QuantizedBlock& q);

// Packs each row of `codes` (num_rows x dim, row-major) LSB-first, padding
// every row to a byte boundary. Codes must be < 2^bits.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes, std::size_t dim,
                                     unsigned bits);
std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t dim,
                                        unsigned bits);

std::size_t row_bytes(std::size_t dim, unsigned bits);
std::size_t payload_bytes(std::size_t rows, std::size_t dim, unsigned bits);
std::size_t metadata_bytes(std::size_t rows, unsigned bits = 1);

std::vector<std::uint8_t> encode_block(const QuantizedBlock& q);
void encode_block_into(const QuantizedBlock& q, std::vector<std::uint8_t>& out);
// Parses a block from the front of `bytes`; `consumed` receives its length.
QuantizedBlock decode_block(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

}  // namespace halobit
