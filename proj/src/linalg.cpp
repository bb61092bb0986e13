#include "halobit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "halobit/error.hpp"
#include "halobit/kernels.hpp"

namespace halobit {

namespace {

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + dims(a.rows(), a.cols()) + " vs " +
                     dims(b.rows(), b.cols()));
  }
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                     " does not match " + dims(rows, cols));
  }
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("DenseMatrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return DenseMatrix(r, c, std::move(data));
}

void CsrMatrix::validate() const {
  if (row_ptr.size() != rows + 1) throw ShapeError("CsrMatrix: row_ptr length != rows + 1");
  if (row_ptr.front() != 0) throw ShapeError("CsrMatrix: row_ptr[0] != 0");
  if (row_ptr.back() != col_idx.size() || col_idx.size() != values.size()) {
    throw ShapeError("CsrMatrix: row_ptr[rows], col_idx and values lengths disagree");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (row_ptr[i] > row_ptr[i + 1]) throw ShapeError("CsrMatrix: row_ptr decreasing");
    for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) {
      if (col_idx[e] >= cols) throw ShapeError("CsrMatrix: column index out of range");
      if (e > row_ptr[i] && col_idx[e - 1] >= col_idx[e]) {
        throw ShapeError("CsrMatrix: columns not strictly increasing in row " + std::to_string(i));
      }
    }
  }
}

CsrMatrix CsrMatrix::identity(std::size_t n) {
  CsrMatrix m;
  m.rows = m.cols = n;
  m.row_ptr.resize(n + 1);
  std::iota(m.row_ptr.begin(), m.row_ptr.end(), std::size_t{0});
  m.col_idx.resize(n);
  std::iota(m.col_idx.begin(), m.col_idx.end(), 0u);
  m.values.assign(n, 1.0);
  return m;
}

CsrMatrix CsrMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                   std::vector<std::uint32_t> r, std::vector<std::uint32_t> c,
                                   std::vector<double> v) {
  if (r.size() != c.size() || r.size() != v.size()) {
    throw ShapeError("CsrMatrix::from_triplets: triplet arrays differ in length");
  }
  std::vector<std::size_t> order(r.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return r[x] != r[y] ? r[x] < r[y] : c[x] < c[y];
  });
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(rows + 1, 0);
  m.col_idx.reserve(order.size());
  m.values.reserve(order.size());
  for (std::size_t idx : order) {
    if (r[idx] >= rows || c[idx] >= cols) {
      throw ShapeError("CsrMatrix::from_triplets: entry out of range");
    }
    ++m.row_ptr[r[idx] + 1];
    m.col_idx.push_back(c[idx]);
    m.values.push_back(v[idx]);
  }
  std::partial_sum(m.row_ptr.begin(), m.row_ptr.end(), m.row_ptr.begin());
  m.validate();  // catches duplicates
  return m;
}

DenseMatrix CsrMatrix::to_dense() const {
  DenseMatrix d(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) d(i, col_idx[e]) = values[e];
  }
  return d;
}

CsrMatrix CsrMatrix::transpose() const {
  CsrMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.row_ptr.assign(cols + 1, 0);
  for (std::uint32_t c : col_idx) ++t.row_ptr[c + 1];
  std::partial_sum(t.row_ptr.begin(), t.row_ptr.end(), t.row_ptr.begin());
  t.col_idx.resize(nnz());
  t.values.resize(nnz());
  std::vector<std::size_t> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
  // Walking source rows in order keeps target columns sorted.
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) {
      const std::size_t slot = cursor[col_idx[e]]++;
      t.col_idx[slot] = static_cast<std::uint32_t>(i);
      t.values[slot] = values[e];
    }
  }
  return t;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + dims(a.rows(), a.cols()) + " x " + dims(b.rows(), b.cols()));
  }
  DenseMatrix c(a.rows(), b.cols());
  kernels::omp::gemm(a.values().data(), b.values().data(), c.values().data(), a.rows(), a.cols(),
                     b.cols());
  return c;
}

DenseMatrix spmm(const CsrMatrix& a, const DenseMatrix& h) {
  if (a.cols != h.rows()) {
    throw ShapeError("spmm: csr " + dims(a.rows, a.cols) + " x dense " + dims(h.rows(), h.cols()));
  }
  DenseMatrix out(a.rows, h.cols());
  kernels::omp::spmm(a, h.values().data(), h.cols(), out.values().data());
  return out;
}

DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

DenseMatrix relu(const DenseMatrix& m) {
  DenseMatrix out = m;
  for (double& x : out.values()) x = x > 0.0 ? x : 0.0;
  return out;
}

DenseMatrix relu_grad(const DenseMatrix& pre_activation) {
  DenseMatrix out(pre_activation.rows(), pre_activation.cols());
  auto src = pre_activation.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "hadamard");
  DenseMatrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return out;
}

void add_inplace(DenseMatrix& acc, const DenseMatrix& x) {
  require_same_shape(acc, x, "add_inplace");
  auto a = acc.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += xv[i];
}

DenseMatrix hconcat(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("hconcat: row counts differ");
  DenseMatrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), dst.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), dst.begin() + static_cast<long>(a.cols()));
  }
  return out;
}

DenseMatrix vconcat(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.empty() && a.rows() == 0) return b;
  if (b.rows() == 0) return a;
  if (a.cols() != b.cols()) throw ShapeError("vconcat: column counts differ");
  std::vector<double> data(a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return DenseMatrix(a.rows() + b.rows(), a.cols(), std::move(data));
}

DenseMatrix gather_rows(const DenseMatrix& m, std::span<const std::uint32_t> rows) {
  DenseMatrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw ShapeError("gather_rows: row index out of range");
    auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

DenseMatrix slice_rows(const DenseMatrix& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.rows()) throw ShapeError("slice_rows: range out of bounds");
  auto v = m.values();
  return DenseMatrix(end - begin, m.cols(),
                     std::vector<double>(v.begin() + static_cast<long>(begin * m.cols()),
                                         v.begin() + static_cast<long>(end * m.cols())));
}

DenseMatrix slice_cols(const DenseMatrix& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.cols()) throw ShapeError("slice_cols: range out of bounds");
  DenseMatrix out(m.rows(), end - begin);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i);
    std::copy(src.begin() + static_cast<long>(begin), src.begin() + static_cast<long>(end),
              out.row(i).begin());
  }
  return out;
}

bool all_finite(const DenseMatrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double x) { return std::isfinite(x); });
}

double max_abs(const DenseMatrix& m) {
  double best = 0.0;
  for (double x : m.values()) best = std::max(best, std::abs(x));
  return best;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double best = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) best = std::max(best, std::abs(av[i] - bv[i]));
  return best;
}

LossResult softmax_cross_entropy(const DenseMatrix& logits, std::span<const std::uint32_t> labels,
                                 std::span<const std::uint8_t> mask, double norm) {
  if (labels.size() != logits.rows() || mask.size() != logits.rows()) {
    throw ShapeError("softmax_cross_entropy: labels/mask length != logits rows");
  }
  if (!(norm > 0.0)) throw ShapeError("softmax_cross_entropy: norm must be positive");
  LossResult out{0.0, DenseMatrix(logits.rows(), logits.cols())};
  const std::size_t classes = logits.cols();
  std::vector<double> probs(classes);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    if (labels[i] >= classes) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                       " out of range in row " + std::to_string(i));
    }
    auto z = logits.row(i);
    const auto top = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    const double zmax = z[top];
    // log(1 + rest) through log1p keeps small losses accurate.
    double rest = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[c] = std::exp(z[c] - zmax);
      if (c != top) rest += probs[c];
    }
    const double denom = 1.0 + rest;
    const double log_denom = std::log1p(rest);
    out.loss += -(z[labels[i]] - zmax - log_denom);
    auto g = out.grad.row(i);
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = probs[c] / denom;
      g[c] = (p - (c == labels[i] ? 1.0 : 0.0)) / norm;
    }
  }
  out.loss /= norm;
  return out;
}

AdamState::AdamState(std::size_t rows, std::size_t cols, double learning_rate)
    : m(rows, cols), v(rows, cols), lr(learning_rate) {}

void adam_step(DenseMatrix& w, const DenseMatrix& g, AdamState& s) {
  require_same_shape(w, g, "adam_step");
  require_same_shape(w, s.m, "adam_step (first moment)");
  require_same_shape(w, s.v, "adam_step (second moment)");
  ++s.t;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  auto wv = w.values();
  auto gv = g.values();
  auto mv = s.m.values();
  auto vv = s.v.values();
  for (std::size_t i = 0; i < wv.size(); ++i) {
    mv[i] = s.beta1 * mv[i] + (1.0 - s.beta1) * gv[i];
    vv[i] = s.beta2 * vv[i] + (1.0 - s.beta2) * gv[i] * gv[i];
    const double m_hat = mv[i] / bc1;
    const double v_hat = vv[i] / bc2;
    wv[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
  }
}

}  // namespace halobit
