// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "xmodal/error.hpp"

namespace xmodal {

/// Dense row-major matrix of Real. Row vectors are 1xN matrices and scalars
/// are 1x1, which keeps the autograd layer to a single value type.
template <typename Real>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::size_t rows, std::size_t cols,
                          std::vector<Real> data) {
    if (data.size() != rows * cols) {
      throw DimensionError("Matrix::from_rows: data size " +
                           std::to_string(data.size()) + " != " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
    Matrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.data_ = std::move(data);
    return m;
  }

  static Matrix row(std::vector<Real> data) {
    return from_rows(1, data.size(), std::move(data));
  }

  static Matrix scalar(Real v) { return from_rows(1, 1, {v}); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const Real& at(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  Real& operator()(std::size_t r, std::size_t c) { return at(r, c); }
  const Real& operator()(std::size_t r, std::size_t c) const {
    return at(r, c);
  }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
  const Real* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }

  void fill(Real v) { data_.assign(data_.size(), v); }

  bool same_shape(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const {
    for (Real v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

  std::string shape_str() const {
    return "(" + std::to_string(rows_) + ", " + std::to_string(cols_) + ")";
  }

  template <typename Other>
  Matrix<Other> cast() const {
    Matrix<Other> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out.storage()[i] = static_cast<Other>(data_[i]);
    }
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

}  // namespace xmodal
