// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "dpmm/kernels.hpp"

namespace dpmm::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(DPMM_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() noexcept {
  if (const char* env = std::getenv("DPMM_KERNELS")) {
    if (std::string_view(env) == "scalar") return &scalar_table();
  }
  return &table(Backend::avx2);
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> ptr{initial_table()};
  return ptr;
}

}  // namespace

bool available(Backend backend) noexcept {
  switch (backend) {
    case Backend::scalar:
      return true;
    case Backend::avx2: {
      static const bool has = cpu_has_avx2();
      return has;
    }
  }
  return false;
}

const KernelTable& table(Backend backend) noexcept {
#if defined(DPMM_HAVE_AVX2)
  if (backend == Backend::avx2 && available(Backend::avx2)) return detail::avx2_table();
#endif
  (void)backend;
  return scalar_table();
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_acquire); }

bool select(Backend backend) noexcept {
  if (!available(backend)) return false;
  current().store(&table(backend), std::memory_order_release);
  return true;
}

std::string_view to_string(Backend backend) noexcept {
  switch (backend) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace dpmm::kernels
