#pragma once

// Hot loops of the trainer and codec. Every kernel has a serial reference
// and an OpenMP version. The parallel versions split work by output row
// only, so each output element is produced by exactly one thread with the
// same accumulation order as the serial loop: results are bit-identical.

#include <cstddef>
#include <cstdint>
#include <span>

#include "halobit/linalg.hpp"
#include "halobit/rng.hpp"

namespace halobit::kernels {

// Per-row affine quantization parameters in the wire precision.
struct RowAffine {
  std::span<const float> min;
  std::span<const float> scale;
};

namespace serial {

// c (m x n) = a (m x k) * b (k x n), all row-major.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// out (a.rows x d) = a * h, h is (a.cols x d) row-major.
void spmm(const CsrMatrix& a, const double* h, std::size_t d, double* out);
// Stochastic rounding of (x - min) / scale onto [0, levels]. Element (r, j)
// consumes uniform number counter + r * cols + j of `rng` (the stream is not
// advanced). Rows with scale 0 get code 0.
void stochastic_round(const DenseMatrix& m, RowAffine affine, std::uint32_t levels,
                      const RngStream& rng, std::span<std::uint32_t> codes);

}  // namespace serial

namespace omp {

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void spmm(const CsrMatrix& a, const double* h, std::size_t d, double* out);
void stochastic_round(const DenseMatrix& m, RowAffine affine, std::uint32_t levels,
                      const RngStream& rng, std::span<std::uint32_t> codes);

}  // namespace omp

// Thread count used by the OpenMP kernels on the calling thread.
int thread_count();
void set_thread_count(int n);

}  // namespace halobit::kernels
