// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Numeric inner loops used by the model, the losses and the metrics.
//
// Every kernel has a portable scalar reference in `mvi::simd::scalar` and an
// AVX2+FMA variant in `mvi::simd::avx2`. The unqualified entry points in
// `mvi::simd` dispatch to the best variant the running CPU supports; tests pin
// the scalar path with `set_isa` and compare the two for equivalence.
//
// Matrices are row-major. `gemm` computes
//   C = alpha * op(A) * op(B) + beta * C
// where op(A) is m x k and op(B) is k x n. With beta == 0, C is overwritten
// without being read.
//
// `softmax_rows` normalizes each of `rows` rows of length n (stride ld) in
// place. The AVX2 float variant uses a polynomial exp accurate to a few ulp,
// so it matches the reference to a tolerance rather than bitwise.

#pragma once

#include <cstddef>

namespace mvi::simd {

enum class Isa { kScalar, kAvx2 };

const char* isa_name(Isa isa);
/// Best ISA supported by the CPU this process runs on.
Isa detected_isa();
/// ISA used by the dispatching entry points.
Isa active_isa();
/// Overrides the dispatch target. Requesting an unsupported ISA falls back to
/// scalar. Returns the ISA actually selected.
Isa set_isa(Isa isa);

#define MVI_SIMD_KERNELS(T)                                                                  \
  void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, \
            const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,           \
            std::size_t ldc);                                                                 \
  T dot(const T* x, const T* y, std::size_t n);                                               \
  void axpy(std::size_t n, T alpha, const T* x, T* y);                                        \
  double sum_sq_diff(const T* x, const T* y, std::size_t n);                                  \
  void softmax_rows(T* x, std::size_t rows, std::size_t n, std::size_t ld);

namespace scalar {
MVI_SIMD_KERNELS(float)
MVI_SIMD_KERNELS(double)
}  // namespace scalar

namespace avx2 {
/// True when this binary was built with the AVX2 kernels (x86-64 only).
bool compiled();
MVI_SIMD_KERNELS(float)
MVI_SIMD_KERNELS(double)
}  // namespace avx2

MVI_SIMD_KERNELS(float)
MVI_SIMD_KERNELS(double)

#undef MVI_SIMD_KERNELS

}  // namespace mvi::simd
