#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace fedbench {

// Dense row-major matrix of doubles. Just enough surface for the network
// and aggregation code; no expression templates, no views.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return a_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return a_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return a_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {a_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {a_.data() + r * cols_, cols_};
  }

  std::span<double> flat() { return a_; }
  std::span<const double> flat() const { return a_; }

  bool same_shape(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.a_ == b.a_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> a_;
};

// Row-major 0/1 byte matrix for one-hot encoded features. Keeps the full
// national-scale dataset addressable without blowing up memory.
class BinaryMatrix {
 public:
  BinaryMatrix() = default;
  BinaryMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), a_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  std::uint8_t& operator()(std::size_t r, std::size_t c) {
    return a_[r * cols_ + c];
  }
  std::uint8_t operator()(std::size_t r, std::size_t c) const {
    return a_[r * cols_ + c];
  }

  std::span<std::uint8_t> row(std::size_t r) {
    return {a_.data() + r * cols_, cols_};
  }
  std::span<const std::uint8_t> row(std::size_t r) const {
    return {a_.data() + r * cols_, cols_};
  }

  friend bool operator==(const BinaryMatrix& a, const BinaryMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.a_ == b.a_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<std::uint8_t> a_;
};

}  // namespace fedbench
