// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dpmm/score.hpp"

namespace dpmm {

struct LabeledScores {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;  // 1 = anomalous
};

/// Mann-Whitney AUROC with average ranks for ties.
double auroc(const LabeledScores& data);

/// Step-wise average precision; tied scores enter as a single block.
double aupr(const LabeledScores& data);

/// 2|pred & gt| / (|pred| + |gt|), 1 when both are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

/// Dice over the union of all pixels of several image pairs.
double pooled_dice(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);

/// Mean of per-image Dice values.
double mean_dice(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);

struct PairedImageScores {
  std::vector<double> a;
  std::vector<double> b;
  std::size_t permutations = 10000;
  std::uint64_t seed = 0;
};

/// Two-sided sign-flip permutation test on the mean paired difference.
double paired_permutation_test(const PairedImageScores& data);

}  // namespace dpmm
