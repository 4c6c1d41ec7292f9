// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

// Compiled with -mavx2 -mfma; only reached through the dispatcher after a
// runtime CPU check.

#include <immintrin.h>

#include "dpmm/kernels.hpp"

namespace dpmm::kernels::detail {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void diag_quadratic(const double* y, const double* means, const double* inv_vars,
                    const double* bias, std::size_t K, std::size_t D, double* out) {
  const std::size_t D8 = D & ~std::size_t{7};
  const std::size_t D4 = D & ~std::size_t{3};
  for (std::size_t k = 0; k < K; ++k) {
    const double* m = means + k * D;
    const double* iv = inv_vars + k * D;
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t d = 0;
    for (; d < D8; d += 8) {
      const __m256d diff0 = _mm256_sub_pd(_mm256_loadu_pd(y + d), _mm256_loadu_pd(m + d));
      const __m256d diff1 =
          _mm256_sub_pd(_mm256_loadu_pd(y + d + 4), _mm256_loadu_pd(m + d + 4));
      acc0 = _mm256_fmadd_pd(_mm256_mul_pd(diff0, diff0), _mm256_loadu_pd(iv + d), acc0);
      acc1 = _mm256_fmadd_pd(_mm256_mul_pd(diff1, diff1), _mm256_loadu_pd(iv + d + 4), acc1);
    }
    for (; d < D4; d += 4) {
      const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(y + d), _mm256_loadu_pd(m + d));
      acc0 = _mm256_fmadd_pd(_mm256_mul_pd(diff, diff), _mm256_loadu_pd(iv + d), acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; d < D; ++d) {
      const double diff = y[d] - m[d];
      acc += diff * diff * iv[d];
    }
    out[k] = bias[k] - 0.5 * acc;
  }
}

void dot_rows(const double* y, const double* rows, std::size_t K, std::size_t D, double* out) {
  const std::size_t D8 = D & ~std::size_t{7};
  const std::size_t D4 = D & ~std::size_t{3};
  for (std::size_t k = 0; k < K; ++k) {
    const double* r = rows + k * D;
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t d = 0;
    for (; d < D8; d += 8) {
      acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(y + d), _mm256_loadu_pd(r + d), acc0);
      acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(y + d + 4), _mm256_loadu_pd(r + d + 4), acc1);
    }
    for (; d < D4; d += 4) {
      acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(y + d), _mm256_loadu_pd(r + d), acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; d < D; ++d) acc += y[d] * r[d];
    out[k] = acc;
  }
}

void sqdist_rows(const double* y, const double* rows, std::size_t K, std::size_t D,
                 double* out) {
  const std::size_t D8 = D & ~std::size_t{7};
  const std::size_t D4 = D & ~std::size_t{3};
  for (std::size_t k = 0; k < K; ++k) {
    const double* r = rows + k * D;
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t d = 0;
    for (; d < D8; d += 8) {
      const __m256d diff0 = _mm256_sub_pd(_mm256_loadu_pd(y + d), _mm256_loadu_pd(r + d));
      const __m256d diff1 =
          _mm256_sub_pd(_mm256_loadu_pd(y + d + 4), _mm256_loadu_pd(r + d + 4));
      acc0 = _mm256_fmadd_pd(diff0, diff0, acc0);
      acc1 = _mm256_fmadd_pd(diff1, diff1, acc1);
    }
    for (; d < D4; d += 4) {
      const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(y + d), _mm256_loadu_pd(r + d));
      acc0 = _mm256_fmadd_pd(diff, diff, acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; d < D; ++d) {
      const double diff = y[d] - r[d];
      acc += diff * diff;
    }
    out[k] = acc;
  }
}

void accumulate_moments(double w, const double* y, std::size_t D, double* first,
                        double* second) {
  const __m256d wv = _mm256_set1_pd(w);
  const std::size_t D4 = D & ~std::size_t{3};
  std::size_t d = 0;
  for (; d < D4; d += 4) {
    const __m256d yv = _mm256_loadu_pd(y + d);
    const __m256d wy = _mm256_mul_pd(wv, yv);
    _mm256_storeu_pd(first + d, _mm256_add_pd(_mm256_loadu_pd(first + d), wy));
    _mm256_storeu_pd(second + d, _mm256_fmadd_pd(wy, yv, _mm256_loadu_pd(second + d)));
  }
  for (; d < D; ++d) {
    const double wy = w * y[d];
    first[d] += wy;
    second[d] += wy * y[d];
  }
}

constexpr KernelTable kAvx2{Backend::avx2, "avx2", diag_quadratic, dot_rows, sqdist_rows,
                            accumulate_moments};

}  // namespace

const KernelTable& avx2_table() noexcept { return kAvx2; }

}  // namespace dpmm::kernels::detail
