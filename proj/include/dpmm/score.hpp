// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

// Anomaly scoring against the prototypes of a fitted mixture. All scores are
// oriented so that larger means more anomalous.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpmm/core.hpp"

namespace dpmm {

enum class ScoreMethod { cosine, euclidean, likelihood };

std::string_view to_string(ScoreMethod method) noexcept;
std::optional<ScoreMethod> parse_score_method(std::string_view name) noexcept;

struct PatchGrid {
  Matrix values;  // grid_h x grid_w
};

struct AnomalyMap {
  Matrix values;  // H x W
  std::string image_id;
};

struct NormalizedBatch {
  EmbeddingBatch batch;
  std::size_t degenerate_rows = 0;  // rows with norm < 1e-12, left as is
};

NormalizedBatch normalize_rows(const EmbeddingBatch& batch);

/// Per-row score: cosine -> 1 - max cos(y, mu_k); euclidean -> min ||y - mu_k||;
/// likelihood -> -max log N(y | mu_k, Sigma_k). Only components with
/// pi_k > t_pi take part.
std::vector<double> anomaly_scores(const EmbeddingBatch& batch, const DpmmModel& model,
                                   ScoreMethod method, double t_pi);

/// Index of the closest effective component under the method's proximity.
/// Ties resolve to the lowest index.
std::vector<std::size_t> component_assignment(const EmbeddingBatch& batch,
                                              const DpmmModel& model, ScoreMethod method,
                                              double t_pi);

/// Bilinear upsampling with each patch value at its cell centre; pixels
/// outside the outermost centres take the edge value.
AnomalyMap patch_to_pixel(const PatchGrid& grid, std::size_t H, std::size_t W);

/// Smallest t with #{s > t} / n <= target_fpr.
double select_threshold(std::span<const double> normal_scores, double target_fpr);

struct BinaryMask {
  std::size_t H = 0;
  std::size_t W = 0;
  std::vector<std::uint8_t> bits;  // H * W, 0 or 1

  [[nodiscard]] bool at(std::size_t r, std::size_t c) const noexcept { return bits[r * W + c] != 0; }
  bool operator==(const BinaryMask&) const = default;
};

BinaryMask binarize(const AnomalyMap& map, double threshold);

}  // namespace dpmm
