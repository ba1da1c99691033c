#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crayon/errors.hpp"

namespace crayon::numerics {

// Dense row-major matrix. Vectors are stored as 1 x n matrices.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(T{0}); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

template <typename T>
std::string shape_string(const Matrix<T>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename U, typename T>
Matrix<U> cast(const Matrix<T>& m) {
  Matrix<U> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = static_cast<U>(m.data()[i]);
  return out;
}

template <typename T>
Matrix<T> row_vector(std::span<const T> v) {
  return Matrix<T>(1, v.size(), std::vector<T>(v.begin(), v.end()));
}

template <typename T>
Matrix<T> identity(std::size_t n) {
  Matrix<T> m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
  return m;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& m) {
  Matrix<T> out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  }
  return out;
}

namespace detail {

template <typename T>
inline void axpy(T alpha, const T* __restrict x, T* __restrict y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += alpha * x[j];
}

// Four consecutive axpy calls fused; each y[j] sees the same additions in
// the same order.
template <typename T>
inline void axpy4(const T* alpha, const T* const* x, T* __restrict y, std::size_t n) {
  const T a0 = alpha[0], a1 = alpha[1], a2 = alpha[2], a3 = alpha[3];
  const T* __restrict x0 = x[0];
  const T* __restrict x1 = x[1];
  const T* __restrict x2 = x[2];
  const T* __restrict x3 = x[3];
  for (std::size_t j = 0; j < n; ++j) {
    T v = y[j];
    v += a0 * x0[j];
    v += a1 * x1[j];
    v += a2 * x2[j];
    v += a3 * x3[j];
    y[j] = v;
  }
}

// y += sum_t alpha[t * alpha_stride] * x[t], t ascending, for t < count <= 4,
// skipping zero multipliers.
template <typename T>
inline void axpy_block(std::size_t count, const T* alpha, std::size_t alpha_stride, const T* x,
                       std::size_t x_stride, T* __restrict y, std::size_t n) {
  T a[4];
  const T* rows[4];
  std::size_t filled = 0;
  for (std::size_t t = 0; t < count; ++t) {
    const T at = alpha[t * alpha_stride];
    if (at == T{0}) continue;
    a[filled] = at;
    rows[filled] = x + t * x_stride;
    ++filled;
  }
  if (filled == 4) {
    axpy4(a, rows, y, n);
  } else {
    for (std::size_t t = 0; t < filled; ++t) axpy(a[t], rows[t], y, n);
  }
}

template <typename T>
void check_inner(const Matrix<T>& a, std::size_t a_inner, const Matrix<T>& b, std::size_t b_inner,
                 const char* op) {
  if (a_inner != b_inner) {
    throw DimensionError(std::string(op) + ": inner dimensions differ (" + shape_string(a) +
                         " vs " + shape_string(b) + ")");
  }
}

template <typename T>
void check_out(const Matrix<T>& out, std::size_t rows, std::size_t cols, const char* op) {
  if (out.rows() != rows || out.cols() != cols) {
    throw DimensionError(std::string(op) + ": output is " + shape_string(out) + ", expected " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

}  // namespace detail

// out += a * b
template <typename T>
void matmul_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  detail::check_inner(a, a.cols(), b, b.rows(), "matmul");
  detail::check_out(out, a.rows(), b.cols(), "matmul");
  const std::size_t n = b.cols(), inner = a.cols();
  // Blocks of four rows of b stay in cache while every row of a visits them.
  for (std::size_t k0 = 0; k0 < inner; k0 += 4) {
    const std::size_t count = std::min<std::size_t>(4, inner - k0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      detail::axpy_block(count, a.data() + i * inner + k0, 1, b.data() + k0 * n, n,
                         out.data() + i * n, n);
    }
  }
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> out(a.rows(), b.cols());
  matmul_acc(a, b, out);
  return out;
}

// out += a^T * b
template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  detail::check_inner(a, a.rows(), b, b.rows(), "matmul_tn");
  detail::check_out(out, a.cols(), b.cols(), "matmul_tn");
  const std::size_t n = b.cols(), inner = a.rows();
  for (std::size_t r0 = 0; r0 < inner; r0 += 4) {
    const std::size_t count = std::min<std::size_t>(4, inner - r0);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      detail::axpy_block(count, a.data() + r0 * a.cols() + i, a.cols(), b.data() + r0 * n, n,
                         out.data() + i * n, n);
    }
  }
}

// out += a * b^T
template <typename T>
void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  detail::check_inner(a, a.cols(), b, b.cols(), "matmul_nt");
  matmul_acc(a, transpose(b), out);
}

template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> out(a.rows(), b.rows());
  matmul_nt_acc(a, b, out);
  return out;
}

template <typename T>
void add_inplace(Matrix<T>& dst, const Matrix<T>& src) {
  if (!dst.same_shape(src)) {
    throw DimensionError("add: " + shape_string(dst) + " vs " + shape_string(src));
  }
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
void scale_inplace(Matrix<T>& m, T s) {
  for (auto& v : m.values()) v *= s;
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff: " + shape_string(a) + " vs " + shape_string(b));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return m;
}

}  // namespace crayon::numerics
