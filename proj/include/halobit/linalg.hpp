#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace halobit {

// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Compressed sparse row matrix. Column indices are strictly increasing
// within a row; validate() checks the full invariant set.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return col_idx.size(); }
  void validate() const;

  static CsrMatrix identity(std::size_t n);
  // Entries may arrive in any order; duplicates are an error.
  static CsrMatrix from_triplets(std::size_t rows, std::size_t cols,
                                 std::vector<std::uint32_t> r, std::vector<std::uint32_t> c,
                                 std::vector<double> v);

  DenseMatrix to_dense() const;
  CsrMatrix transpose() const;
  bool operator==(const CsrMatrix&) const = default;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix spmm(const CsrMatrix& a, const DenseMatrix& h);
DenseMatrix transpose(const DenseMatrix& m);

DenseMatrix relu(const DenseMatrix& m);
// Subgradient at 0 is taken as 0.
DenseMatrix relu_grad(const DenseMatrix& pre_activation);
DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b);
void add_inplace(DenseMatrix& acc, const DenseMatrix& x);

// Columns of a followed by columns of b; row counts must agree.
DenseMatrix hconcat(const DenseMatrix& a, const DenseMatrix& b);
// Rows of a followed by rows of b; column counts must agree.
DenseMatrix vconcat(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix gather_rows(const DenseMatrix& m, std::span<const std::uint32_t> rows);
DenseMatrix slice_rows(const DenseMatrix& m, std::size_t begin, std::size_t end);
DenseMatrix slice_cols(const DenseMatrix& m, std::size_t begin, std::size_t end);

bool all_finite(const DenseMatrix& m);
double max_abs(const DenseMatrix& m);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

struct LossResult {
  double loss = 0.0;
  DenseMatrix grad;
};

// Masked mean softmax cross-entropy. Rows with mask[i] == 0 contribute
// nothing and get a zero gradient row. `norm` is the divisor applied to both
// the loss sum and the gradient; the trainer passes the global train count.
LossResult softmax_cross_entropy(const DenseMatrix& logits, std::span<const std::uint32_t> labels,
                                 std::span<const std::uint8_t> mask, double norm);

struct AdamState {
  DenseMatrix m;
  DenseMatrix v;
  std::uint64_t t = 0;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols, double lr);
};

void adam_step(DenseMatrix& w, const DenseMatrix& g, AdamState& s);

}  // namespace halobit
