// Serial vs OpenMP kernel timings. Prints one line per kernel and size, and
// checks that both versions produce identical output.
//
//   halobit_bench [--reps N] [--threads T]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <vector>

#include "halobit/kernels.hpp"
#include "halobit/linalg.hpp"
#include "halobit/rng.hpp"

using namespace halobit;

namespace {

double best_ms(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  const RngStream rng(StreamKey{.seed = seed, .domain = StreamDomain::FeatureNoise});
  DenseMatrix m(r, c);
  auto v = m.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 2.0 * rng.at(i) - 1.0;
  return m;
}

CsrMatrix random_csr(std::size_t n, std::size_t per_row, std::uint64_t seed) {
  RngStream rng(StreamKey{.seed = seed, .domain = StreamDomain::GraphEdges});
  std::vector<std::uint32_t> r, c;
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint32_t> cols;
    while (cols.size() < per_row) {
      const auto j = static_cast<std::uint32_t>(rng.next_below(n));
      if (std::find(cols.begin(), cols.end(), j) == cols.end()) cols.push_back(j);
    }
    for (auto j : cols) {
      r.push_back(static_cast<std::uint32_t>(i));
      c.push_back(j);
      v.push_back(rng.next());
    }
  }
  return CsrMatrix::from_triplets(n, n, r, c, v);
}

void line(const char* kernel, const char* size, double serial, double parallel, bool same) {
  std::printf("%-16s %-18s serial %9.3f ms  omp %9.3f ms  speedup %5.2fx  %s\n", kernel, size,
              serial, parallel, serial / parallel, same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::strcmp(argv[i], "--reps") == 0) reps = std::atoi(argv[++i]);
    else if (std::strcmp(argv[i], "--threads") == 0) kernels::set_thread_count(std::atoi(argv[++i]));
  }
  std::printf("threads %d, best of %d\n", kernels::thread_count(), reps);
  bool all_same = true;

  for (std::size_t n : {128, 512}) {
    const DenseMatrix a = random_matrix(n, n, 1);
    const DenseMatrix b = random_matrix(n, n, 2);
    DenseMatrix cs(n, n), cp(n, n);
    const double ts = best_ms(reps, [&] {
      kernels::serial::gemm(a.values().data(), b.values().data(), cs.values().data(), n, n, n);
    });
    const double tp = best_ms(reps, [&] {
      kernels::omp::gemm(a.values().data(), b.values().data(), cp.values().data(), n, n, n);
    });
    char size[32];
    std::snprintf(size, sizeof size, "%zux%zux%zu", n, n, n);
    line("gemm", size, ts, tp, cs == cp);
    all_same &= cs == cp;
  }

  for (std::size_t n : {10000, 100000}) {
    const std::size_t d = 64;
    const CsrMatrix a = random_csr(n, 16, 3);
    const DenseMatrix h = random_matrix(n, d, 4);
    DenseMatrix os(n, d), op(n, d);
    const double ts = best_ms(reps, [&] { kernels::serial::spmm(a, h.values().data(), d, os.values().data()); });
    const double tp = best_ms(reps, [&] { kernels::omp::spmm(a, h.values().data(), d, op.values().data()); });
    char size[32];
    std::snprintf(size, sizeof size, "n=%zu,nnz=%zu", n, a.nnz());
    line("spmm", size, ts, tp, os == op);
    all_same &= os == op;
  }

  for (std::size_t rows : {1000, 20000}) {
    const std::size_t d = 128;
    const DenseMatrix m = random_matrix(rows, d, 5);
    std::vector<float> mins(rows, -1.0f), scales(rows, 2.0f);
    const RngStream rng(StreamKey{.seed = 6});
    std::vector<std::uint32_t> cs(rows * d), cp(rows * d);
    const kernels::RowAffine aff{mins, scales};
    const double ts = best_ms(reps, [&] { kernels::serial::stochastic_round(m, aff, 1, rng, cs); });
    const double tp = best_ms(reps, [&] { kernels::omp::stochastic_round(m, aff, 1, rng, cp); });
    char size[32];
    std::snprintf(size, sizeof size, "%zux%zu", rows, d);
    line("stoch_round", size, ts, tp, cs == cp);
    all_same &= cs == cp;
  }
  return all_same ? 0 : 1;
}
