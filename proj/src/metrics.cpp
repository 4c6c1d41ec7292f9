// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#include "dpmm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dpmm/error.hpp"

namespace dpmm {
namespace {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts count_classes(const LabeledScores& data) {
  require(data.scores.size() == data.labels.size(), Errc::dimension_mismatch,
          "scores and labels differ in length");
  ClassCounts c;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    require(std::isfinite(data.scores[i]), Errc::numeric, "scores contain non-finite values");
    (data.labels[i] ? c.pos : c.neg) += 1;
  }
  return c;
}

std::vector<std::size_t> order_by_score(const std::vector<double>& scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (descending) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  } else {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  }
  return idx;
}

}  // namespace

double auroc(const LabeledScores& data) {
  const auto counts = count_classes(data);
  require(counts.pos > 0 && counts.neg > 0, Errc::invalid_argument,
          "AUROC needs both anomalous and normal samples");
  const auto idx = order_by_score(data.scores, false);
  // Sum of 1-based average ranks of the positives.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && data.scores[idx[j]] == data.scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (data.labels[idx[t]]) rank_sum += avg_rank;
    }
    i = j;
  }
  const double P = static_cast<double>(counts.pos);
  const double N = static_cast<double>(counts.neg);
  return (rank_sum - P * (P + 1.0) / 2.0) / (P * N);
}

double aupr(const LabeledScores& data) {
  const auto counts = count_classes(data);
  require(counts.pos > 0, Errc::invalid_argument, "AUPR needs at least one anomalous sample");
  const auto idx = order_by_score(data.scores, true);
  const double P = static_cast<double>(counts.pos);
  std::size_t tp = 0;
  std::size_t seen = 0;
  double ap = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    std::size_t block_tp = 0;
    while (j < idx.size() && data.scores[idx[j]] == data.scores[idx[i]]) {
      block_tp += data.labels[idx[j]] ? 1 : 0;
      ++j;
    }
    tp += block_tp;
    seen = j;
    if (block_tp > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      ap += precision * (static_cast<double>(block_tp) / P);
    }
    i = j;
  }
  return ap;
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
  require(pred.H == gt.H && pred.W == gt.W && pred.bits.size() == gt.bits.size(),
          Errc::dimension_mismatch, "mask shapes differ");
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool p = pred.bits[i] != 0;
    const bool g = gt.bits[i] != 0;
    inter += (p && g) ? 1 : 0;
    a += p ? 1 : 0;
    b += g ? 1 : 0;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double pooled_dice(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  require(preds.size() == gts.size(), Errc::dimension_mismatch, "mask counts differ");
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t m = 0; m < preds.size(); ++m) {
    require(preds[m].bits.size() == gts[m].bits.size() && preds[m].H == gts[m].H,
            Errc::dimension_mismatch, "mask shapes differ");
    for (std::size_t i = 0; i < preds[m].bits.size(); ++i) {
      const bool p = preds[m].bits[i] != 0;
      const bool g = gts[m].bits[i] != 0;
      inter += (p && g) ? 1 : 0;
      a += p ? 1 : 0;
      b += g ? 1 : 0;
    }
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double mean_dice(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  require(preds.size() == gts.size(), Errc::dimension_mismatch, "mask counts differ");
  require(!preds.empty(), Errc::invalid_argument, "no masks to average");
  double total = 0.0;
  for (std::size_t m = 0; m < preds.size(); ++m) total += dice(preds[m], gts[m]);
  return total / static_cast<double>(preds.size());
}

double paired_permutation_test(const PairedImageScores& data) {
  require(data.a.size() == data.b.size(), Errc::dimension_mismatch,
          "paired score vectors differ in length");
  require(data.a.size() >= 2, Errc::invalid_argument, "permutation test needs at least 2 pairs");
  const std::size_t n = data.a.size();
  std::vector<double> diff(n);
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = data.a[i] - data.b[i];
    observed += diff[i];
  }
  observed = std::abs(observed / static_cast<double>(n));
  // Relative slack so exact ties survive summation-order rounding.
  const double bar = observed * (1.0 - 1e-12);

  std::mt19937_64 rng(data.seed);
  std::size_t extreme = 0;
  for (std::size_t p = 0; p < data.permutations; ++p) {
    double s = 0.0;
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 64 == 0) bits = rng();
      s += (bits & 1u) ? -diff[i] : diff[i];
      bits >>= 1;
    }
    if (std::abs(s / static_cast<double>(n)) >= bar) ++extreme;
  }
  return static_cast<double>(1 + extreme) / static_cast<double>(1 + data.permutations);
}

}  // namespace dpmm
