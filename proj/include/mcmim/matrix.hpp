#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mcmim/errors.hpp"

namespace mcmim {

// Dense row-major matrix. Vectors are represented as 1xC or Nx1.
template <typename T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int r, int c, T fill = T(0))
      : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  T* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
  const T* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

  T& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  const T& operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

  size_t size() const { return data.size(); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows, cols);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
bool all_finite(const Matrix<T>& m) {
  for (T v : m.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// C = A(NxK) * B(KxM), ikj order so the inner loop runs over contiguous rows.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const T* arow = a.row(i);
    T* crow = c.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const T aik = arow[k];
      const T* brow = b.row(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

// C = A(NxK) * B(MxK)^T
template <typename T>
Matrix<T> matmul_bt(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const T* arow = a.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const T* brow = b.row(j);
      T acc = T(0);
      for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      c(i, j) = acc;
    }
  }
  return c;
}

// C += A(KxN)^T * B(KxM); accumulates into an existing matrix.
template <typename T>
void matmul_at_b_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  for (int k = 0; k < a.rows; ++k) {
    const T* arow = a.row(k);
    const T* brow = b.row(k);
    for (int i = 0; i < a.cols; ++i) {
      const T aki = arow[i];
      T* crow = c.row(i);
      for (int j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
}

// Y = X(Nxin) * W(inxout) + bias(1xout)
template <typename T>
Matrix<T> linear(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  Matrix<T> y(x.rows, w.cols);
  for (int i = 0; i < x.rows; ++i) {
    T* yrow = y.row(i);
    for (int j = 0; j < w.cols; ++j) yrow[j] = b.data[j];
    const T* xrow = x.row(i);
    for (int k = 0; k < x.cols; ++k) {
      const T xik = xrow[k];
      const T* wrow = w.row(k);
      for (int j = 0; j < w.cols; ++j) yrow[j] += xik * wrow[j];
    }
  }
  return y;
}

// Backward of linear(): dX = dY*W^T, dW += X^T*dY, db += colsum(dY).
// dY*W^T is computed as dY*(W^T) so the inner loop stays lane-parallel;
// the transpose costs 1/N of the matmul itself.
template <typename T>
void linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy,
                     Matrix<T>& dx, Matrix<T>& dw, Matrix<T>& db) {
  dx = matmul(dy, transpose(w));
  matmul_at_b_acc(x, dy, dw);
  for (int i = 0; i < dy.rows; ++i) {
    const T* dyrow = dy.row(i);
    for (int j = 0; j < dy.cols; ++j) db.data[j] += dyrow[j];
  }
}

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
void scale_inplace(Matrix<T>& a, T s) {
  for (T& v : a.data) v *= s;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

// In-place row softmax with per-row max subtraction.
template <typename T>
void softmax_rows(Matrix<T>& m) {
  for (int i = 0; i < m.rows; ++i) {
    T* r = m.row(i);
    T mx = r[0];
    for (int j = 1; j < m.cols; ++j) mx = std::max(mx, r[j]);
    T sum = T(0);
    for (int j = 0; j < m.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < m.cols; ++j) r[j] *= inv;
  }
}

// Per-row log-softmax, numerically stable.
template <typename T>
Matrix<T> log_softmax_rows(const Matrix<T>& m) {
  Matrix<T> out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    const T* r = m.row(i);
    T* o = out.row(i);
    T mx = r[0];
    for (int j = 1; j < m.cols; ++j) mx = std::max(mx, r[j]);
    T sum = T(0);
    for (int j = 0; j < m.cols; ++j) sum += std::exp(r[j] - mx);
    const T lse = mx + std::log(sum);
    for (int j = 0; j < m.cols; ++j) o[j] = r[j] - lse;
  }
  return out;
}

template <typename T>
Matrix<T> copy_cols(const Matrix<T>& m, int c0, int c1) {
  Matrix<T> out(m.rows, c1 - c0);
  for (int i = 0; i < m.rows; ++i) {
    const T* src = m.row(i) + c0;
    T* dst = out.row(i);
    for (int j = 0; j < c1 - c0; ++j) dst[j] = src[j];
  }
  return out;
}

template <typename T>
void paste_cols(Matrix<T>& m, const Matrix<T>& block, int c0) {
  for (int i = 0; i < m.rows; ++i) {
    T* dst = m.row(i) + c0;
    const T* src = block.row(i);
    for (int j = 0; j < block.cols; ++j) dst[j] = src[j];
  }
}

template <typename T>
void add_cols(Matrix<T>& m, const Matrix<T>& block, int c0) {
  for (int i = 0; i < m.rows; ++i) {
    T* dst = m.row(i) + c0;
    const T* src = block.row(i);
    for (int j = 0; j < block.cols; ++j) dst[j] += src[j];
  }
}

}  // namespace mcmim
