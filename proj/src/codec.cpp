#include "halobit/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "halobit/error.hpp"
#include "halobit/kernels.hpp"

namespace halobit {

static_assert(std::endian::native == std::endian::little,
              "wire encoding assumes a little-endian host");

QuantConfig::QuantConfig(unsigned bits) : bits_(bits), levels_(0) {
  if (!valid_bits(bits)) {
    throw ConfigError("bits must be in 1..8, 16 or 32 (passthrough), got " + std::to_string(bits));
  }
  if (!passthrough()) levels_ = static_cast<std::uint32_t>((std::uint64_t{1} << bits) - 1);
}

bool QuantConfig::valid_bits(unsigned bits) {
  return (bits >= 1 && bits <= 8) || bits == 16 || bits == kPassthroughBits;
}

std::size_t row_bytes(std::size_t dim, unsigned bits) { return (dim * bits + 7) / 8; }

std::size_t payload_bytes(std::size_t rows, std::size_t dim, unsigned bits) {
  return rows * row_bytes(dim, bits);
}

std::size_t metadata_bytes(std::size_t rows, unsigned bits) {
  return bits == QuantConfig::kPassthroughBits ? 0 : rows * 2 * sizeof(float);
}

void QuantizedBlock::validate() const {
  if (!QuantConfig::valid_bits(bits)) {
    throw CodecError("block has unsupported bit width " + std::to_string(bits));
  }
  const std::size_t expected = passthrough()
                                   ? std::size_t{num_rows} * dim * sizeof(double)
                                   : payload_bytes(num_rows, dim, bits);
  if (payload.size() != expected) {
    throw CodecError("block payload is " + std::to_string(payload.size()) + " bytes, expected " +
                     std::to_string(expected));
  }
  const std::size_t meta_rows = passthrough() ? 0 : num_rows;
  if (row_min.size() != meta_rows || row_scale.size() != meta_rows) {
    throw CodecError("block metadata length does not match num_rows");
  }
  for (float s : row_scale) {
    if (!(s >= 0.0f) || !std::isfinite(s)) throw CodecError("block has invalid row scale");
  }
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes, std::size_t dim,
                                     unsigned bits) {
  if (bits == 0 || bits > 16) throw CodecError("pack_codes: bits must be in 1..16");
  if (dim == 0) {
    if (!codes.empty()) throw CodecError("pack_codes: codes given for zero-width rows");
    return {};
  }
  if (codes.size() % dim != 0) throw CodecError("pack_codes: code count not a multiple of dim");
  const std::size_t rows = codes.size() / dim;
  const std::size_t stride = row_bytes(dim, bits);
  const std::uint32_t limit = 1u << bits;
  std::vector<std::uint8_t> out(rows * stride, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::uint8_t* dst = out.data() + r * stride;
    std::uint64_t acc = 0;
    unsigned filled = 0;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < dim; ++j) {
      const std::uint32_t c = codes[r * dim + j];
      if (c >= limit) {
        throw CodecError("pack_codes: code " + std::to_string(c) + " does not fit in " +
                         std::to_string(bits) + " bits");
      }
      acc |= static_cast<std::uint64_t>(c) << filled;
      filled += bits;
      while (filled >= 8) {
        dst[pos++] = static_cast<std::uint8_t>(acc & 0xFF);
        acc >>= 8;
        filled -= 8;
      }
    }
    if (filled > 0) dst[pos] = static_cast<std::uint8_t>(acc & 0xFF);
  }
  return out;
}

std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t dim,
                                        unsigned bits) {
  if (bits == 0 || bits > 16) throw CodecError("unpack_codes: bits must be in 1..16");
  if (dim == 0) return {};
  const std::size_t stride = row_bytes(dim, bits);
  if (bytes.size() % stride != 0) {
    throw CodecError("unpack_codes: " + std::to_string(bytes.size()) +
                     " bytes is not a whole number of " + std::to_string(stride) + "-byte rows");
  }
  const std::size_t rows = bytes.size() / stride;
  const std::uint64_t mask = (std::uint64_t{1} << bits) - 1;
  std::vector<std::uint32_t> codes(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* src = bytes.data() + r * stride;
    std::uint64_t acc = 0;
    unsigned avail = 0;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < dim; ++j) {
      while (avail < bits) {
        acc |= static_cast<std::uint64_t>(src[pos++]) << avail;
        avail += 8;
      }
      codes[r * dim + j] = static_cast<std::uint32_t>(acc & mask);
      acc >>= bits;
      avail -= bits;
    }
  }
  return codes;
}

namespace {

// Chooses f32 metadata so that min_f <= min and min_f + B * scale_f >= max
// in double arithmetic. Every normalized value then lies in [0, B] and the
// decoder, which uses the same f32 values, stays unbiased.
void row_affine(std::span<const double> row, std::uint32_t levels, float& min_f, float& scale_f) {
  const auto [lo_it, hi_it] = std::minmax_element(row.begin(), row.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  min_f = static_cast<float>(lo);
  if (static_cast<double>(min_f) > lo) {
    min_f = std::nextafter(min_f, -std::numeric_limits<float>::infinity());
  }
  if (hi == lo) {
    scale_f = 0.0f;
  } else {
    const double b = static_cast<double>(levels);
    scale_f = static_cast<float>((hi - static_cast<double>(min_f)) / b);
    while (static_cast<double>(min_f) + b * static_cast<double>(scale_f) < hi) {
      scale_f = std::nextafter(scale_f, std::numeric_limits<float>::infinity());
    }
  }
  if (!std::isfinite(min_f) || !std::isfinite(scale_f)) {
    throw CodecError("quantize_rows: row range exceeds single precision");
  }
}

}  // namespace

QuantizedBlock quantize_rows(const DenseMatrix& m, const QuantConfig& cfg, const RngStream& rng) {
  if (!all_finite(m)) throw CodecError("quantize_rows: non-finite input value");
  QuantizedBlock q;
  q.num_rows = static_cast<std::uint32_t>(m.rows());
  q.dim = static_cast<std::uint32_t>(m.cols());
  q.bits = static_cast<std::uint8_t>(cfg.bits());
  if (cfg.passthrough()) {
    q.payload.resize(m.size() * sizeof(double));
    if (!q.payload.empty()) std::memcpy(q.payload.data(), m.values().data(), q.payload.size());
    return q;
  }
  q.row_min.resize(m.rows());
  q.row_scale.resize(m.rows());
  if (m.cols() > 0) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      row_affine(m.row(r), cfg.levels(), q.row_min[r], q.row_scale[r]);
    }
  }
  std::vector<std::uint32_t> codes(m.size());
  kernels::omp::stochastic_round(m, {q.row_min, q.row_scale}, cfg.levels(), rng, codes);
  q.payload = pack_codes(codes, m.cols(), cfg.bits());
  return q;
}

DenseMatrix dequantize_rows(const QuantizedBlock& q) {
  q.validate();
  DenseMatrix out(q.num_rows, q.dim);
  if (q.passthrough()) {
    if (!q.payload.empty()) std::memcpy(out.values().data(), q.payload.data(), q.payload.size());
    return out;
  }
  const auto codes = unpack_codes(q.payload, q.dim, q.bits);
  for (std::size_t r = 0; r < q.num_rows; ++r) {
    const double lo = q.row_min[r];
    const double scale = q.row_scale[r];
    auto dst = out.row(r);
    for (std::size_t j = 0; j < q.dim; ++j) {
      dst[j] = scale * static_cast<double>(codes[r * q.dim + j]) + lo;
    }
  }
  return out;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) {
    throw CodecError("decode_block: truncated at byte " + std::to_string(pos));
  }
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void encode_block_into(const QuantizedBlock& q, std::vector<std::uint8_t>& out) {
  q.validate();
  out.reserve(out.size() + QuantizedBlock::kHeaderBytes + q.row_min.size() * 8 + q.payload.size());
  put<std::uint8_t>(out, QuantizedBlock::kVersion);
  put<std::uint8_t>(out, q.bits);
  put<std::uint16_t>(out, 0);
  put<std::uint32_t>(out, q.num_rows);
  put<std::uint32_t>(out, q.dim);
  for (std::size_t r = 0; r < q.row_min.size(); ++r) {
    put<float>(out, q.row_min[r]);
    put<float>(out, q.row_scale[r]);
  }
  out.insert(out.end(), q.payload.begin(), q.payload.end());
}

std::vector<std::uint8_t> encode_block(const QuantizedBlock& q) {
  std::vector<std::uint8_t> out;
  encode_block_into(q, out);
  return out;
}

QuantizedBlock decode_block(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  std::size_t pos = 0;
  const auto version = get<std::uint8_t>(bytes, pos);
  if (version != QuantizedBlock::kVersion) {
    throw CodecError("decode_block: unsupported version " + std::to_string(version));
  }
  QuantizedBlock q;
  q.bits = get<std::uint8_t>(bytes, pos);
  (void)get<std::uint16_t>(bytes, pos);
  q.num_rows = get<std::uint32_t>(bytes, pos);
  q.dim = get<std::uint32_t>(bytes, pos);
  if (!QuantConfig::valid_bits(q.bits)) {
    throw CodecError("decode_block: unsupported bit width " + std::to_string(q.bits));
  }
  if (!q.passthrough()) {
    if (std::size_t{q.num_rows} * 2 * sizeof(float) > bytes.size() - pos) {
      throw CodecError("decode_block: metadata truncated for " + std::to_string(q.num_rows) +
                       " rows at offset " + std::to_string(pos));
    }
    q.row_min.resize(q.num_rows);
    q.row_scale.resize(q.num_rows);
    for (std::size_t r = 0; r < q.num_rows; ++r) {
      q.row_min[r] = get<float>(bytes, pos);
      q.row_scale[r] = get<float>(bytes, pos);
    }
  }
  const std::size_t len = q.passthrough() ? std::size_t{q.num_rows} * q.dim * sizeof(double)
                                          : payload_bytes(q.num_rows, q.dim, q.bits);
  if (pos + len > bytes.size()) {
    throw CodecError("decode_block: payload truncated, need " + std::to_string(len) +
                     " bytes at offset " + std::to_string(pos));
  }
  q.payload.assign(bytes.begin() + static_cast<long>(pos),
                   bytes.begin() + static_cast<long>(pos + len));
  pos += len;
  q.validate();
  if (consumed) *consumed = pos;
  return q;
}

}  // namespace halobit
