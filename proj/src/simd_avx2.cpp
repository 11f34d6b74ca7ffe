// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// AVX2+FMA kernels. Functions carry a per-function target attribute so the
// translation unit builds without -mavx2; dispatch guarantees they only run on
// CPUs that report both features.

#include "mvi/simd.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#if defined(__x86_64__) || defined(_M_X64)
#define MVI_HAVE_X86 1
#include <immintrin.h>
#else
#define MVI_HAVE_X86 0
#endif

namespace mvi::simd::avx2 {

bool compiled() { return MVI_HAVE_X86 != 0; }

#if MVI_HAVE_X86

#define MVI_AVX2 __attribute__((target("avx2,fma")))

namespace {

// Cache blocking: a kc x nc panel of op(B) stays in L2, an mc x kc panel of
// op(A) in L1/L2.
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 2048;

struct F32 {
  using scalar = float;
  using reg = __m256;
  static constexpr std::size_t lanes = 8;
  static constexpr std::size_t mr = 6;
  static constexpr std::size_t nr = 16;
  MVI_AVX2 static reg zero() { return _mm256_setzero_ps(); }
  MVI_AVX2 static reg load(const float* p) { return _mm256_loadu_ps(p); }
  MVI_AVX2 static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  MVI_AVX2 static reg bcast(const float* p) { return _mm256_broadcast_ss(p); }
  MVI_AVX2 static reg set1(float v) { return _mm256_set1_ps(v); }
  MVI_AVX2 static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
};

struct F64 {
  using scalar = double;
  using reg = __m256d;
  static constexpr std::size_t lanes = 4;
  static constexpr std::size_t mr = 6;
  static constexpr std::size_t nr = 8;
  MVI_AVX2 static reg zero() { return _mm256_setzero_pd(); }
  MVI_AVX2 static reg load(const double* p) { return _mm256_loadu_pd(p); }
  MVI_AVX2 static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  MVI_AVX2 static reg bcast(const double* p) { return _mm256_broadcast_sd(p); }
  MVI_AVX2 static reg set1(double v) { return _mm256_set1_pd(v); }
  MVI_AVX2 static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
};

template <typename T>
void pack_a(bool ta, const T* a, std::size_t lda, std::size_t i0, std::size_t mc, std::size_t p0,
            std::size_t kc, std::size_t mr, T* out) {
  for (std::size_t ip = 0; ip < mc; ip += mr) {
    const std::size_t rows = std::min(mr, mc - ip);
    for (std::size_t p = 0; p < kc; ++p) {
      std::size_t ii = 0;
      for (; ii < rows; ++ii) {
        const std::size_t i = i0 + ip + ii;
        const std::size_t q = p0 + p;
        *out++ = ta ? a[q * lda + i] : a[i * lda + q];
      }
      for (; ii < mr; ++ii) *out++ = T(0);
    }
  }
}

template <typename T>
void pack_b(bool tb, const T* b, std::size_t ldb, std::size_t p0, std::size_t kc, std::size_t j0,
            std::size_t nc, std::size_t nr, T* out) {
  for (std::size_t jp = 0; jp < nc; jp += nr) {
    const std::size_t cols = std::min(nr, nc - jp);
    for (std::size_t p = 0; p < kc; ++p) {
      const std::size_t q = p0 + p;
      std::size_t jj = 0;
      if (!tb) {
        const T* row = b + q * ldb + j0 + jp;
        for (; jj < cols; ++jj) *out++ = row[jj];
      } else {
        for (; jj < cols; ++jj) *out++ = b[(j0 + jp + jj) * ldb + q];
      }
      for (; jj < nr; ++jj) *out++ = T(0);
    }
  }
}

template <typename V>
MVI_AVX2 void micro_kernel(std::size_t kc, const typename V::scalar* ap,
                           const typename V::scalar* bp, typename V::scalar* c, std::size_t ldc,
                           typename V::scalar alpha, std::size_t rows, std::size_t cols) {
  using S = typename V::scalar;
  constexpr std::size_t kMr = V::mr;
  constexpr std::size_t kVecs = V::nr / V::lanes;
  typename V::reg acc[kMr][kVecs];
#pragma GCC unroll 8
  for (std::size_t r = 0; r < kMr; ++r)
#pragma GCC unroll 4
    for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] = V::zero();

  for (std::size_t p = 0; p < kc; ++p) {
    typename V::reg bv[kVecs];
#pragma GCC unroll 4
    for (std::size_t v = 0; v < kVecs; ++v) bv[v] = V::load(bp + v * V::lanes);
#pragma GCC unroll 8
    for (std::size_t r = 0; r < kMr; ++r) {
      const typename V::reg av = V::bcast(ap + r);
#pragma GCC unroll 4
      for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] = V::fma(av, bv[v], acc[r][v]);
    }
    ap += kMr;
    bp += V::nr;
  }

  const typename V::reg va = V::set1(alpha);
  if (rows == kMr && cols == V::nr) {
#pragma GCC unroll 8
    for (std::size_t r = 0; r < kMr; ++r) {
#pragma GCC unroll 4
      for (std::size_t v = 0; v < kVecs; ++v) {
        S* dst = c + r * ldc + v * V::lanes;
        V::store(dst, V::fma(va, acc[r][v], V::load(dst)));
      }
    }
    return;
  }
  alignas(32) S tmp[kMr * V::nr];
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t v = 0; v < kVecs; ++v) V::store(tmp + r * V::nr + v * V::lanes, acc[r][v]);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] += alpha * tmp[r * V::nr + j];
}

template <typename V>
MVI_AVX2 void gemm_blocked(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                           typename V::scalar alpha, const typename V::scalar* a, std::size_t lda,
                           const typename V::scalar* b, std::size_t ldb, typename V::scalar beta,
                           typename V::scalar* c, std::size_t ldc) {
  using S = typename V::scalar;
  for (std::size_t i = 0; i < m; ++i) {
    S* ci = c + i * ldc;
    if (beta == S(0)) {
      std::fill(ci, ci + n, S(0));
    } else if (beta != S(1)) {
      for (std::size_t j = 0; j < n; ++j) ci[j] *= beta;
    }
  }
  if (k == 0 || alpha == S(0)) return;

  thread_local std::vector<S> a_pack;
  thread_local std::vector<S> b_pack;
  constexpr std::size_t kMr = V::mr;
  constexpr std::size_t kNr = V::nr;

  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    const std::size_t nc_pad = (nc + kNr - 1) / kNr * kNr;
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      b_pack.resize(nc_pad * kc);
      pack_b(tb, b, ldb, pc, kc, jc, nc, kNr, b_pack.data());
      for (std::size_t ic = 0; ic < m; ic += kMc) {
        const std::size_t mc = std::min(kMc, m - ic);
        const std::size_t mc_pad = (mc + kMr - 1) / kMr * kMr;
        a_pack.resize(mc_pad * kc);
        pack_a(ta, a, lda, ic, mc, pc, kc, kMr, a_pack.data());
        for (std::size_t jr = 0; jr < nc; jr += kNr) {
          const std::size_t cols = std::min(kNr, nc - jr);
          const S* bp = b_pack.data() + (jr / kNr) * kc * kNr;
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            const std::size_t rows = std::min(kMr, mc - ir);
            const S* ap = a_pack.data() + (ir / kMr) * kc * kMr;
            micro_kernel<V>(kc, ap, bp, c + (ic + ir) * ldc + jc + jr, ldc, alpha, rows, cols);
          }
        }
      }
    }
  }
}

MVI_AVX2 inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, lo);
  return _mm_cvtss_f32(_mm_add_ss(lo, sh));
}

MVI_AVX2 inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

}  // namespace

MVI_AVX2 void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
                   const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta,
                   float* c, std::size_t ldc) {
  gemm_blocked<F32>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

MVI_AVX2 void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
                   const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
                   double* c, std::size_t ldc) {
  gemm_blocked<F64>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

MVI_AVX2 float dot(const float* x, const float* y, std::size_t n) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), s1);
    s2 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 16), _mm256_loadu_ps(y + i + 16), s2);
    s3 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 24), _mm256_loadu_ps(y + i + 24), s3);
  }
  for (; i + 8 <= n; i += 8) s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
  float s = hsum(_mm256_add_ps(_mm256_add_ps(s0, s1), _mm256_add_ps(s2, s3)));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

MVI_AVX2 double dot(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

MVI_AVX2 void axpy(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

MVI_AVX2 void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

MVI_AVX2 double sum_sq_diff(const float* x, const float* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i), yv = _mm256_loadu_ps(y + i);
    const __m256d lo = _mm256_sub_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(xv)),
                                     _mm256_cvtps_pd(_mm256_castps256_ps128(yv)));
    const __m256d hi = _mm256_sub_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(xv, 1)),
                                     _mm256_cvtps_pd(_mm256_extractf128_ps(yv, 1)));
    s0 = _mm256_fmadd_pd(lo, lo, s0);
    s1 = _mm256_fmadd_pd(hi, hi, s1);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    s += d * d;
  }
  return s;
}

MVI_AVX2 double sum_sq_diff(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4));
    s0 = _mm256_fmadd_pd(d0, d0, s0);
    s1 = _mm256_fmadd_pd(d1, d1, s1);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

namespace {

// exp for arguments <= 0 (softmax after max subtraction): range reduction by
// ln 2 and a degree-6 polynomial.
MVI_AVX2 inline __m256 exp_nonpos(__m256 x) {
  x = _mm256_max_ps(x, _mm256_set1_ps(-87.0f));
  const __m256 fx = _mm256_round_ps(_mm256_mul_ps(x, _mm256_set1_ps(1.44269504088896341f)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, _mm256_mul_ps(x, x), _mm256_add_ps(x, _mm256_set1_ps(1.0f)));
  const __m256i e = _mm256_slli_epi32(_mm256_add_epi32(_mm256_cvtps_epi32(fx), _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(e));
}

}  // namespace

MVI_AVX2 void softmax_rows(float* x, std::size_t rows, std::size_t n, std::size_t ld) {
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = x + r * ld;
    std::size_t j = 0;
    __m256 vmx = _mm256_set1_ps(row[0]);
    for (; j + 8 <= n; j += 8) vmx = _mm256_max_ps(vmx, _mm256_loadu_ps(row + j));
    __m128 m4 = _mm_max_ps(_mm256_castps256_ps128(vmx), _mm256_extractf128_ps(vmx, 1));
    m4 = _mm_max_ps(m4, _mm_movehl_ps(m4, m4));
    m4 = _mm_max_ss(m4, _mm_movehdup_ps(m4));
    float mx = _mm_cvtss_f32(m4);
    for (; j < n; ++j) mx = std::max(mx, row[j]);
    const __m256 vm = _mm256_set1_ps(mx);
    __m256 vs = _mm256_setzero_ps();
    j = 0;
    for (; j + 8 <= n; j += 8) {
      const __m256 e = exp_nonpos(_mm256_sub_ps(_mm256_loadu_ps(row + j), vm));
      _mm256_storeu_ps(row + j, e);
      vs = _mm256_add_ps(vs, e);
    }
    float sum = hsum(vs);
    for (; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const float inv = 1.0f / sum;
    const __m256 vi = _mm256_set1_ps(inv);
    j = 0;
    for (; j + 8 <= n; j += 8) _mm256_storeu_ps(row + j, _mm256_mul_ps(_mm256_loadu_ps(row + j), vi));
    for (; j < n; ++j) row[j] *= inv;
  }
}

// Double softmax is only used by gradient checks; the reference is fast enough.
void softmax_rows(double* x, std::size_t rows, std::size_t n, std::size_t ld) {
  scalar::softmax_rows(x, rows, n, ld);
}

#else  // !MVI_HAVE_X86

// TODO: add NEON micro-kernels for aarch64; until then these forward to the
// scalar reference and dispatch never selects them.
#define MVI_FORWARD(T)                                                                         \
  void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a, \
            std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {      \
    scalar::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);                         \
  }                                                                                             \
  T dot(const T* x, const T* y, std::size_t n) { return scalar::dot(x, y, n); }                 \
  void axpy(std::size_t n, T alpha, const T* x, T* y) { scalar::axpy(n, alpha, x, y); }         \
  double sum_sq_diff(const T* x, const T* y, std::size_t n) { return scalar::sum_sq_diff(x, y, n); } \
  void softmax_rows(T* x, std::size_t rows, std::size_t n, std::size_t ld) { scalar::softmax_rows(x, rows, n, ld); }
MVI_FORWARD(float)
MVI_FORWARD(double)
#undef MVI_FORWARD

#endif

}  // namespace mvi::simd::avx2
