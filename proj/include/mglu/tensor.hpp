// Copyright (c) 2026 The MGLU Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mglu/error.hpp"

namespace mglu {

enum class Precision : std::uint8_t { single = 0, dual = 1 };

template <class T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::single : Precision::dual;
}

constexpr std::string_view to_string(Precision p) {
  return p == Precision::single ? "single" : "double";
}

template <class T>
using DenseVector = std::vector<T>;

// Row-major rows x cols. `storage_width_bits` only feeds the traffic model;
// arithmetic always happens in T.
template <class T>
class DenseMatrix {
 public:
  using value_type = T;

  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == checked_size(rows, cols), Errc::dimension_mismatch,
            "matrix data length " + std::to_string(data_.size()) + " != " +
                std::to_string(rows) + "x" + std::to_string(cols));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  unsigned storage_width_bits() const noexcept { return storage_width_bits_; }
  void set_storage_width_bits(unsigned bits) {
    require(bits == 16 || bits == 32, Errc::invalid_argument, "storage width must be 16 or 32 bits");
    storage_width_bits_ = bits;
  }

  bool same_shape(const DenseMatrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  template <class U>
  bool same_shape(const DenseMatrix<U>& o) const noexcept {
    return rows_ == o.rows() && cols_ == o.cols();
  }

  bool all_finite() const noexcept {
    if constexpr (std::is_floating_point_v<T>) {
      return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }
    return true;
  }

  friend bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(std::size_t rows, std::size_t cols) {
    require(cols == 0 || rows <= std::numeric_limits<std::size_t>::max() / cols, Errc::dim_overflow,
            "matrix element count overflows");
    return rows * cols;
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
  unsigned storage_width_bits_ = 32;
};

using BinaryMask = DenseMatrix<std::uint8_t>;

// Non-owning strided 2-D view. The kernel-facing matrix A (M x N) is either a
// plain row-major matrix or the transpose of a layer weight W (h x d), in which
// case A(r, k) = W(k, r) and rows are contiguous in memory.
template <class T>
struct StridedView {
  T* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t row_stride = 0;
  std::size_t col_stride = 0;

  T& operator()(std::size_t r, std::size_t c) const noexcept { return data[r * row_stride + c * col_stride]; }
  bool contiguous_rows() const noexcept { return row_stride == 1; }
};

template <class T>
StridedView<const T> row_major_view(const DenseMatrix<T>& m) {
  return {m.data(), m.rows(), m.cols(), m.cols(), 1};
}

template <class T>
StridedView<const T> transposed_view(const DenseMatrix<T>& m) {
  return {m.data(), m.cols(), m.rows(), 1, m.cols()};
}

template <class T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <class To, class From>
DenseMatrix<To> cast_matrix(const DenseMatrix<From>& m) {
  std::vector<To> out(m.values().begin(), m.values().end());
  DenseMatrix<To> r(m.rows(), m.cols(), std::move(out));
  r.set_storage_width_bits(m.storage_width_bits());
  return r;
}

template <class To, class From>
DenseVector<To> cast_vector(std::span<const From> v) {
  return DenseVector<To>(v.begin(), v.end());
}

template <class T, class Rng>
DenseMatrix<T> random_normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  DenseMatrix<T> m(rows, cols);
  for (auto& v : m.values()) v = static_cast<T>(dist(rng));
  return m;
}

template <class T, class Rng>
DenseVector<T> random_normal_vector(std::size_t n, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  DenseVector<T> v(n);
  for (auto& e : v) e = static_cast<T>(dist(rng));
  return v;
}

// max_k |a_k - b_k| / max_k |b_k|; absolute when the reference is all zero.
template <class A, class B>
double max_relative_error(std::span<const A> a, std::span<const B> b) {
  require(a.size() == b.size(), Errc::dimension_mismatch, "relative error operands differ in length");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    den = std::max(den, std::abs(static_cast<double>(b[i])));
  }
  return den > 0.0 ? num / den : num;
}

template <class A, class B>
double max_abs_error(std::span<const A> a, std::span<const B> b) {
  require(a.size() == b.size(), Errc::dimension_mismatch, "abs error operands differ in length");
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    num = std::max(num, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return num;
}

}  // namespace mglu
