#include "halobit/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace halobit::kernels {

namespace {

// Below this many output elements a parallel region costs more than it saves.
constexpr std::size_t kParallelThreshold = 1 << 14;

inline void gemm_row(const double* a_row, const double* b, double* c_row, std::size_t k,
                     std::size_t n) {
  std::fill(c_row, c_row + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double s = a_row[p];
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += s * b_row[j];
  }
}

inline void spmm_row(const CsrMatrix& a, std::size_t i, const double* h, std::size_t d,
                     double* out_row) {
  std::fill(out_row, out_row + d, 0.0);
  for (std::size_t e = a.row_ptr[i]; e < a.row_ptr[i + 1]; ++e) {
    const double v = a.values[e];
    const double* h_row = h + static_cast<std::size_t>(a.col_idx[e]) * d;
    for (std::size_t j = 0; j < d; ++j) out_row[j] += v * h_row[j];
  }
}

inline void round_row(const DenseMatrix& m, std::size_t r, RowAffine affine,
                      std::uint32_t levels, const RngStream& rng,
                      std::span<std::uint32_t> codes) {
  const std::size_t d = m.cols();
  std::uint32_t* out = codes.data() + r * d;
  const double scale = affine.scale[r];
  if (scale == 0.0) {
    std::fill(out, out + d, 0u);
    return;
  }
  const double lo = affine.min[r];
  const double top = static_cast<double>(levels);
  const auto row = m.row(r);
  const std::uint64_t base = rng.counter() + static_cast<std::uint64_t>(r * d);
  for (std::size_t j = 0; j < d; ++j) {
    double x = (row[j] - lo) / scale;
    x = std::clamp(x, 0.0, top);
    const double fl = std::floor(x);
    const double frac = x - fl;
    const double u = rng.at(base + j);
    double code = fl + (u < frac ? 1.0 : 0.0);
    out[j] = static_cast<std::uint32_t>(std::min(code, top));
  }
}

}  // namespace

namespace serial {

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(a + i * k, b, c + i * n, k, n);
}

void spmm(const CsrMatrix& a, const double* h, std::size_t d, double* out) {
  for (std::size_t i = 0; i < a.rows; ++i) spmm_row(a, i, h, d, out + i * d);
}

void stochastic_round(const DenseMatrix& m, RowAffine affine, std::uint32_t levels,
                      const RngStream& rng, std::span<std::uint32_t> codes) {
  for (std::size_t r = 0; r < m.rows(); ++r) round_row(m, r, affine, levels, rng, codes);
}

}  // namespace serial

namespace omp {

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelThreshold)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gemm_row(a + r * k, b, c + r * n, k, n);
  }
}

void spmm(const CsrMatrix& a, const double* h, std::size_t d, double* out) {
  const auto rows = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for schedule(dynamic, 64) if (a.nnz() * d > kParallelThreshold)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    spmm_row(a, r, h, d, out + r * d);
  }
}

void stochastic_round(const DenseMatrix& m, RowAffine affine, std::uint32_t levels,
                      const RngStream& rng, std::span<std::uint32_t> codes) {
  const auto rows = static_cast<std::int64_t>(m.rows());
#pragma omp parallel for schedule(static) if (m.size() > kParallelThreshold)
  for (std::int64_t i = 0; i < rows; ++i) {
    round_row(m, static_cast<std::size_t>(i), affine, levels, rng, codes);
  }
}

}  // namespace omp

int thread_count() { return omp_get_max_threads(); }

void set_thread_count(int n) { omp_set_num_threads(std::max(1, n)); }

}  // namespace halobit::kernels
