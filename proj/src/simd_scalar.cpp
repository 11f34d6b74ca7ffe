// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/simd.hpp"

#include <algorithm>
#include <cmath>

namespace mvi::simd::scalar {
namespace {

template <typename T>
void gemm_ref(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
              std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * ldc;
    if (beta == T(0)) {
      for (std::size_t j = 0; j < n; ++j) ci[j] = T(0);
    } else if (beta != T(1)) {
      for (std::size_t j = 0; j < n; ++j) ci[j] *= beta;
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = alpha * (ta ? a[p * lda + i] : a[i * lda + p]);
      if (tb) {
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * b[j * ldb + p];
      } else {
        const T* bp = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  }
}

template <typename T>
T dot_ref(const T* x, const T* y, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy_ref(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
double sum_sq_diff_ref(const T* x, const T* y, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    s += d * d;
  }
  return s;
}

template <typename T>
void softmax_rows_ref(T* x, std::size_t rows, std::size_t n, std::size_t ld) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x + r * ld;
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
}

}  // namespace

#define MVI_SCALAR_DEFS(T)                                                                     \
  void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a, \
            std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {      \
    gemm_ref<T>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);                          \
  }                                                                                             \
  T dot(const T* x, const T* y, std::size_t n) { return dot_ref<T>(x, y, n); }                  \
  void axpy(std::size_t n, T alpha, const T* x, T* y) { axpy_ref<T>(n, alpha, x, y); }          \
  double sum_sq_diff(const T* x, const T* y, std::size_t n) { return sum_sq_diff_ref<T>(x, y, n); } \
  void softmax_rows(T* x, std::size_t rows, std::size_t n, std::size_t ld) { softmax_rows_ref<T>(x, rows, n, ld); }

MVI_SCALAR_DEFS(float)
MVI_SCALAR_DEFS(double)

}  // namespace mvi::simd::scalar
