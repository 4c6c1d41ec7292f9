// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#include "dpmm/kernels.hpp"

namespace dpmm::kernels {
namespace {

void diag_quadratic(const double* y, const double* means, const double* inv_vars,
                    const double* bias, std::size_t K, std::size_t D, double* out) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* m = means + k * D;
    const double* iv = inv_vars + k * D;
    double acc = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double diff = y[d] - m[d];
      acc += diff * diff * iv[d];
    }
    out[k] = bias[k] - 0.5 * acc;
  }
}

void dot_rows(const double* y, const double* rows, std::size_t K, std::size_t D, double* out) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* r = rows + k * D;
    double acc = 0.0;
    for (std::size_t d = 0; d < D; ++d) acc += y[d] * r[d];
    out[k] = acc;
  }
}

void sqdist_rows(const double* y, const double* rows, std::size_t K, std::size_t D,
                 double* out) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* r = rows + k * D;
    double acc = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double diff = y[d] - r[d];
      acc += diff * diff;
    }
    out[k] = acc;
  }
}

void accumulate_moments(double w, const double* y, std::size_t D, double* first,
                        double* second) {
  for (std::size_t d = 0; d < D; ++d) {
    const double wy = w * y[d];
    first[d] += wy;
    second[d] += wy * y[d];
  }
}

constexpr KernelTable kScalar{Backend::scalar, "scalar", diag_quadratic, dot_rows, sqdist_rows,
                              accumulate_moments};

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

}  // namespace dpmm::kernels
