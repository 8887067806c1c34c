#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hafl {

// Dense row-major matrix of doubles. All entries must be finite.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
  // Convenience for tests and small literals: {{1, 2}, {3, 4}}.
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double> column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);
  void set_row(std::size_t r, std::span<const double> values);

  // Gathers the listed columns (rows) in the order given.
  Matrix select_columns(std::span<const std::size_t> indices) const;
  Matrix select_rows(std::span<const std::size_t> indices) const;

  double frobenius_norm() const;
  double squared_norm() const;
  bool all_finite() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator*=(double factor);

  // Bitwise value equality (shape and every element).
  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix outer(std::span<const double> column, std::span<const double> row);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double factor, Matrix m);

// y = M x
std::vector<double> matvec(const Matrix& m, std::span<const double> x);

double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace hafl
