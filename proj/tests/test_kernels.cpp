#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "halobit/kernels.hpp"
#include "halobit/linalg.hpp"
#include "halobit/rng.hpp"

using namespace halobit;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  const RngStream rng(StreamKey{.seed = seed, .domain = StreamDomain::FeatureNoise});
  DenseMatrix m(r, c);
  auto v = m.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 2.0 * rng.at(i) - 1.0;
  return m;
}

CsrMatrix random_csr(std::size_t rows, std::size_t cols, double density, std::uint64_t seed) {
  RngStream rng(StreamKey{.seed = seed, .domain = StreamDomain::GraphEdges});
  std::vector<std::uint32_t> r, c;
  std::vector<double> v;
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j)
      if (rng.next() < density) {
        r.push_back(i);
        c.push_back(j);
        v.push_back(rng.next());
      }
  return CsrMatrix::from_triplets(rows, cols, r, c, v);
}

struct ThreadScope {
  int saved = kernels::thread_count();
  explicit ThreadScope(int n) { kernels::set_thread_count(n); }
  ~ThreadScope() { kernels::set_thread_count(saved); }
};

}  // namespace

TEST_CASE("gemm: omp is bit-identical to serial") {
  for (int threads : {1, 2, 4}) {
    ThreadScope scope(threads);
    for (std::size_t m : {1u, 7u, 300u}) {
      const auto a = random_matrix(m, 64, m);
      const auto b = random_matrix(64, 48, m + 1);
      DenseMatrix cs(m, 48), cp(m, 48);
      kernels::serial::gemm(a.values().data(), b.values().data(), cs.values().data(), m, 64, 48);
      kernels::omp::gemm(a.values().data(), b.values().data(), cp.values().data(), m, 64, 48);
      CHECK(cs == cp);
    }
  }
}

TEST_CASE("spmm: omp is bit-identical to serial") {
  for (int threads : {1, 3}) {
    ThreadScope scope(threads);
    const auto a = random_csr(800, 600, 0.05, 4);
    const auto h = random_matrix(600, 40, 5);
    DenseMatrix os(800, 40), op(800, 40);
    kernels::serial::spmm(a, h.values().data(), 40, os.values().data());
    kernels::omp::spmm(a, h.values().data(), 40, op.values().data());
    CHECK(os == op);
  }
}

TEST_CASE("stochastic_round: omp is bit-identical to serial and honours the counter") {
  const std::size_t rows = 400, d = 96;
  const auto m = random_matrix(rows, d, 6);
  std::vector<float> mins(rows, -1.0f), scales(rows, 2.0f / 3.0f);
  scales[5] = 0.0f;
  const kernels::RowAffine aff{mins, scales};
  RngStream rng(StreamKey{.seed = 7});
  rng.skip(1000);
  std::vector<std::uint32_t> cs(rows * d), cp(rows * d);
  for (int threads : {1, 4}) {
    ThreadScope scope(threads);
    kernels::serial::stochastic_round(m, aff, 3, rng, cs);
    kernels::omp::stochastic_round(m, aff, 3, rng, cp);
    CHECK(cs == cp);
  }
  for (std::size_t j = 0; j < d; ++j) CHECK(cs[5 * d + j] == 0);
  // Element (r, j) uses uniform counter + r * d + j: rebuild one by hand.
  const std::size_t r = 17, j = 33;
  const double x = (m(r, j) - mins[r]) / scales[r];
  const double fl = std::floor(x);
  const double u = rng.at(1000 + r * d + j);
  const auto expected = static_cast<std::uint32_t>(fl + (u < x - fl ? 1.0 : 0.0));
  CHECK(cs[r * d + j] == expected);
  for (auto c : cs) CHECK(c <= 3);
}
