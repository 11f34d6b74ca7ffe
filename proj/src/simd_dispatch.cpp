// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "mvi/simd.hpp"

namespace mvi::simd {
namespace {

Isa probe() {
#if defined(__x86_64__) || defined(_M_X64)
  if (avx2::compiled() && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
    return Isa::kAvx2;
  }
#endif
  return Isa::kScalar;
}

Isa initial() {
  // MVI_ISA=scalar forces the reference kernels for a whole process.
  if (const char* env = std::getenv("MVI_ISA"); env && std::string_view(env) == "scalar") {
    return Isa::kScalar;
  }
  return probe();
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial()};
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
  static const Isa isa = probe();
  return isa;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

Isa set_isa(Isa isa) {
  if (isa == Isa::kAvx2 && detected_isa() != Isa::kAvx2) isa = Isa::kScalar;
  active().store(isa, std::memory_order_relaxed);
  return isa;
}

#define MVI_DISPATCH(T)                                                                        \
  void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a, \
            std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {      \
    if (active_isa() == Isa::kAvx2) {                                                           \
      avx2::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);                         \
    } else {                                                                                    \
      scalar::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);                       \
    }                                                                                           \
  }                                                                                             \
  T dot(const T* x, const T* y, std::size_t n) {                                                \
    return active_isa() == Isa::kAvx2 ? avx2::dot(x, y, n) : scalar::dot(x, y, n);              \
  }                                                                                             \
  void axpy(std::size_t n, T alpha, const T* x, T* y) {                                         \
    if (active_isa() == Isa::kAvx2) {                                                           \
      avx2::axpy(n, alpha, x, y);                                                               \
    } else {                                                                                    \
      scalar::axpy(n, alpha, x, y);                                                             \
    }                                                                                           \
  }                                                                                             \
  double sum_sq_diff(const T* x, const T* y, std::size_t n) {                                   \
    return active_isa() == Isa::kAvx2 ? avx2::sum_sq_diff(x, y, n) : scalar::sum_sq_diff(x, y, n); \
  }                                                                                             \
  void softmax_rows(T* x, std::size_t rows, std::size_t n, std::size_t ld) {                   \
    if (active_isa() == Isa::kAvx2) {                                                           \
      avx2::softmax_rows(x, rows, n, ld);                                                       \
    } else {                                                                                    \
      scalar::softmax_rows(x, rows, n, ld);                                                     \
    }                                                                                           \
  }

MVI_DISPATCH(float)
MVI_DISPATCH(double)

}  // namespace mvi::simd
