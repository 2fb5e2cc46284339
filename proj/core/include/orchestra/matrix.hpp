#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace orchestra {

/// Row-major dense matrix of doubles. Carries batches, weights, centroids
/// and transport plans.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const noexcept;
  DenseMatrix transposed() const;

  /// Copies the listed rows, in order, into a new matrix.
  DenseMatrix select_rows(std::span<const std::size_t> ids) const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

/// a (n×k) · b (k×m). Throws ShapeError on mismatch.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// a (n×k) · bᵀ where b is (m×k).
DenseMatrix matmul_bt(const DenseMatrix& a, const DenseMatrix& b);
/// aᵀ · b where a is (k×n) and b is (k×m).
DenseMatrix matmul_at(const DenseMatrix& a, const DenseMatrix& b);

/// Scales every row to unit L2 norm; rows with norm <= 1e-12 become e_0.
void normalize_rows(DenseMatrix& m);
/// Scales every column to unit L2 norm; columns with norm <= 1e-12 become e_0.
void normalize_cols(DenseMatrix& m);

/// Stacks matrices with equal column counts vertically.
DenseMatrix vstack(std::span<const DenseMatrix> parts);

/// Row-wise softmax of `logits / temperature`.
DenseMatrix softmax_rows(const DenseMatrix& logits, double temperature = 1.0);

}  // namespace orchestra
