// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

// Builders and independent reference implementations shared by the tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "dpmm/core.hpp"
#include "dpmm/metrics.hpp"

namespace dpmm::testing {

inline DpmmModel make_model(const Matrix& means, const Matrix& vars, const std::vector<double>& pi,
                            bool normalized = false) {
  DpmmModel m;
  m.K = means.rows();
  m.D = means.cols();
  m.means = means;
  m.vars = vars;
  m.sticks = sticks_from_weights(pi);
  m.alpha = 1.0;
  m.normalized_input = normalized;
  return m;
}

inline Matrix rows_of(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.values()) v = u(rng);
  return m;
}

inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t k) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> w(k);
  double s = 0.0;
  for (double& v : w) s += (v = e(rng));
  for (double& v : w) v /= s;
  return w;
}

inline DpmmModel random_model(std::mt19937_64& rng, std::size_t K, std::size_t D,
                              bool normalized = false) {
  return make_model(random_matrix(rng, K, D, -2.0, 2.0), random_matrix(rng, K, D, 0.05, 2.0),
                    random_simplex(rng, K), normalized);
}

// Plain log N(y | m, diag v), written independently of the library.
inline double ref_logpdf(const double* y, const double* m, const double* v, std::size_t D) {
  long double acc = 0.0L;
  for (std::size_t d = 0; d < D; ++d) {
    const long double diff = static_cast<long double>(y[d]) - m[d];
    acc += std::log(2.0L * std::numbers::pi_v<long double> * v[d]) + diff * diff / v[d];
  }
  return static_cast<double>(-0.5L * acc);
}

// Exhaustive pair count: P(pos > neg) + 0.5 P(pos == neg).
inline double pair_count_auroc(const LabeledScores& s) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    if (!s.labels[i]) continue;
    for (std::size_t j = 0; j < s.scores.size(); ++j) {
      if (s.labels[j]) continue;
      pairs += 1.0;
      if (s.scores[i] > s.scores[j]) good += 1.0;
      else if (s.scores[i] == s.scores[j]) good += 0.5;
    }
  }
  return good / pairs;
}

// Enumerates every distinct score as a threshold (predict score >= t) in
// descending order and sums precision times the recall increment.
inline double threshold_enumeration_ap(const LabeledScores& s) {
  std::vector<double> thresholds = s.scores;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double P = 0.0;
  for (auto l : s.labels) P += l ? 1.0 : 0.0;
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, predicted = 0.0;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
      if (s.scores[i] >= t) {
        predicted += 1.0;
        tp += s.labels[i] ? 1.0 : 0.0;
      }
    }
    const double recall = tp / P;
    ap += (tp / predicted) * (recall - prev_recall);
    prev_recall = recall;
  }
  return ap;
}

// Random labeled scores with ties: scores drawn from a small grid.
inline LabeledScores random_labeled(std::mt19937_64& rng, std::size_t n, bool need_neg = true) {
  std::uniform_int_distribution<int> grid(0, 9);
  std::bernoulli_distribution coin(0.4);
  LabeledScores s;
  for (std::size_t i = 0; i < n; ++i) {
    s.scores.push_back(0.1 * grid(rng));
    s.labels.push_back(coin(rng) ? 1 : 0);
  }
  s.labels[0] = 1;
  if (need_neg) s.labels[n - 1] = 0;
  return s;
}

}  // namespace dpmm::testing
