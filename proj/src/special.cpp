// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>

#include "dpmm/error.hpp"
#include "dpmm/fit.hpp"

namespace dpmm {

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    fail(Errc::invalid_argument, "digamma requires a finite positive argument, got " +
                                     std::to_string(x));
  }
  // Psi(x) = Psi(x + 1) - 1/x until the asymptotic series is accurate.
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  // ln x - 1/(2x) - sum_n B_{2n} / (2n x^{2n})
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 -
                                              inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
  return shift + std::log(x) - 0.5 * inv - series;
}

}  // namespace dpmm
