// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

// Inner loops shared by fitting and scoring. Each kernel has a scalar
// reference implementation and, on x86-64, an AVX2+FMA variant. The variant
// is picked once at first use from the CPU's capabilities; DPMM_KERNELS=scalar
// in the environment pins the reference path.
//
// All kernels evaluate one query row against a block of K rows of length D
// (row-major). Reductions run in a fixed order per backend, so a given backend
// is bitwise reproducible; backends agree to rounding.

#pragma once

#include <cstddef>
#include <string_view>

namespace dpmm::kernels {

enum class Backend { scalar, avx2 };

struct KernelTable {
  Backend backend;
  const char* name;

  // out[k] = bias[k] - 0.5 * sum_d (y[d] - means[k,d])^2 * inv_vars[k,d]
  void (*diag_quadratic)(const double* y, const double* means, const double* inv_vars,
                         const double* bias, std::size_t K, std::size_t D, double* out);

  // out[k] = <y, rows[k]>
  void (*dot_rows)(const double* y, const double* rows, std::size_t K, std::size_t D,
                   double* out);

  // out[k] = ||y - rows[k]||^2
  void (*sqdist_rows)(const double* y, const double* rows, std::size_t K, std::size_t D,
                      double* out);

  // first[d] += w * y[d]; second[d] += w * y[d]^2
  void (*accumulate_moments)(double w, const double* y, std::size_t D, double* first,
                             double* second);
};

const KernelTable& scalar_table() noexcept;

/// Whether the backend was compiled in and the running CPU supports it.
bool available(Backend backend) noexcept;

/// Table for a specific backend; falls back to scalar when unavailable.
const KernelTable& table(Backend backend) noexcept;

/// The process-wide table used by the library.
const KernelTable& active() noexcept;

/// Overrides the process-wide selection (tests and benchmarks). Returns false
/// if the backend is not available, leaving the selection unchanged.
bool select(Backend backend) noexcept;

std::string_view to_string(Backend backend) noexcept;

namespace detail {
#if defined(DPMM_HAVE_AVX2)
const KernelTable& avx2_table() noexcept;
#endif
}  // namespace detail

}  // namespace dpmm::kernels
