// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

// Truncated Dirichlet process mixture with diagonal Gaussian components:
// domain types and the density math shared by fitting and scoring.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dpmm/matrix.hpp"

namespace dpmm {

inline constexpr double kDefaultVarFloor = 1e-6;

/// Mixture parameters. Component weights are not stored; they follow from
/// the stick fractions through stick_breaking_weights().
struct DpmmModel {
  std::size_t K = 0;
  std::size_t D = 0;
  Matrix means;                 // K x D
  Matrix vars;                  // K x D, diagonal covariances
  std::vector<double> sticks;   // K, last entry exactly 1
  double alpha = 1.0;           // DP concentration
  bool normalized_input = false;

  [[nodiscard]] std::vector<double> weights() const;

  /// Throws if any invariant (shapes, stick range, variance floor) is violated.
  void validate(double var_floor = kDefaultVarFloor) const;

  bool operator==(const DpmmModel&) const = default;
};

/// Moving averages of the per-component sufficient statistics.
/// c_bar holds only the diagonal of the second moment.
struct SufficientStats {
  std::vector<double> p_bar;  // K
  Matrix m_bar;               // K x D
  Matrix c_bar;               // K x D
  std::size_t batch_size = 0; // B, converts p_bar to expected counts

  bool operator==(const SufficientStats&) const = default;
};

struct EmbeddingBatch {
  Matrix data;  // N x D
  bool normalized = false;

  EmbeddingBatch() = default;
  explicit EmbeddingBatch(Matrix m, bool is_normalized = false)
      : data(std::move(m)), normalized(is_normalized) {}

  [[nodiscard]] std::size_t N() const noexcept { return data.rows(); }
  [[nodiscard]] std::size_t D() const noexcept { return data.cols(); }
};

struct SyntheticSpec {
  Matrix true_means;                 // M x D
  Matrix true_vars;                  // M x D
  std::vector<double> true_weights;  // M, simplex
  std::size_t count = 0;
  std::uint64_t seed = 0;
};

struct SyntheticSample {
  EmbeddingBatch batch;
  std::vector<std::size_t> labels;
};

/// pi_1 = v_1, pi_k = v_k * prod_{j<k} (1 - v_j). Requires v in (0,1] and a
/// final stick of exactly 1.
std::vector<double> stick_breaking_weights(std::span<const double> sticks);

/// Inverse of stick_breaking_weights for a simplex vector. Sticks after the
/// mass is exhausted are set to 1.
std::vector<double> sticks_from_weights(std::span<const double> weights);

double diag_gaussian_logpdf(std::span<const double> y, std::span<const double> mean,
                            std::span<const double> var);

/// Precomputed per-component terms for evaluating many rows: inverse
/// variances and log pi_k - 0.5 * sum_d log(2 pi var_kd).
struct ComponentCache {
  Matrix inv_vars;
  std::vector<double> log_norm;      // without the weight term
  std::vector<double> log_weights;   // -inf for vanished components

  explicit ComponentCache(const DpmmModel& model);
};

/// Posterior component probabilities, N x K, computed in log space. Rows sum
/// to one; components with zero weight receive exactly zero.
Matrix responsibilities(const EmbeddingBatch& batch, const DpmmModel& model);

/// sum_n log sum_k pi_k N(y_n | mu_k, Sigma_k).
double mixture_log_likelihood(const EmbeddingBatch& batch, const DpmmModel& model);

/// Draws count points from a diagonal Gaussian mixture; deterministic per seed.
SyntheticSample sample_synthetic(const SyntheticSpec& spec);

/// log(sum(exp(values))) with max subtraction; -inf for an all -inf input.
double log_sum_exp(std::span<const double> values) noexcept;

}  // namespace dpmm
