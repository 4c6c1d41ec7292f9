// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

// Batched EM for the truncated DP mixture. Sufficient statistics are
// exponential moving averages over mini-batches; each batch triggers an
// E-step, a statistics update, an M-step for (mu, Sigma, v) and a fixed-point
// update of the concentration alpha.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dpmm/core.hpp"

namespace dpmm {

struct FitConfig {
  std::size_t K = 500;
  double gamma = 0.2;
  std::size_t epochs = 40;
  std::size_t batch_vectors = 12288;
  double alpha_init = 1.0;
  std::uint64_t seed = 0;
  double var_floor = kDefaultVarFloor;
  double alpha_low = 1e-3;
  double alpha_high = 1e6;
  // gamma forced to 1, the whole training set is one batch, alpha frozen.
  bool full_batch_mode = false;

  void validate() const;
};

inline constexpr double kDefaultWeightThreshold = 1e-6;

struct FitReport {
  std::vector<double> val_log_likelihood;     // one entry per epoch
  std::vector<std::size_t> effective_count;   // pi_k > kDefaultWeightThreshold
  std::vector<double> epoch_seconds;
  std::optional<std::size_t> best_epoch;      // earliest argmax of the trace
  std::size_t final_effective_components = 0;
};

struct FitResult {
  DpmmModel model;
  SufficientStats stats;
  FitReport report;
};

/// Model and statistics at the start of training: K means drawn with
/// replacement from the batch, shared per-dimension variance, uniform weights.
std::pair<DpmmModel, SufficientStats> init_model(const EmbeddingBatch& first_batch,
                                                 const FitConfig& config);

/// Moving-average update of p_bar, m_bar and the diagonal of c_bar with the
/// batch's responsibility-weighted empirical means.
SufficientStats update_stats(const SufficientStats& stats, const Matrix& resp,
                             const EmbeddingBatch& batch, double gamma);

/// Closed-form M-step. Returns a model with new means, variances and sticks;
/// alpha and normalized_input are copied from `previous`.
DpmmModel m_step(const SufficientStats& stats, const DpmmModel& previous, double alpha_prev,
                 const FitConfig& config);

/// Psi(x) for x > 0.
double digamma(double x);

/// alpha <- (K-1) / sum_{k<K} [Psi(alpha + 1 + C_k + C_{>k}) - Psi(alpha + C_{>k})],
/// with C = B * p_bar, clamped to [alpha_low, alpha_high].
double update_alpha(const SufficientStats& stats, double alpha_prev, const FitConfig& config);

/// Indices k with pi_k > t_pi in ascending order.
std::vector<std::size_t> effective_components(const DpmmModel& model, double t_pi);

/// Stepwise driver, also used directly by tests that need per-step state.
class BatchedEm {
 public:
  BatchedEm(DpmmModel model, SufficientStats stats, FitConfig config);

  /// One E-step + statistics update + M-step + alpha update on `batch`.
  void step(const EmbeddingBatch& batch);

  [[nodiscard]] const DpmmModel& model() const noexcept { return model_; }
  [[nodiscard]] const SufficientStats& stats() const noexcept { return stats_; }
  [[nodiscard]] const FitConfig& config() const noexcept { return config_; }

 private:
  DpmmModel model_;
  SufficientStats stats_;
  FitConfig config_;
};

/// Runs config.epochs passes over the training shards and returns the
/// snapshot with the highest validation log-likelihood. With no validation
/// shards the training shards are scored instead. Shards are concatenated in
/// order and cut into batches of config.batch_vectors rows; batch order is
/// reshuffled every epoch.
FitResult fit(std::span<const EmbeddingBatch> train_shards,
              std::span<const EmbeddingBatch> val_shards, const FitConfig& config);

/// Same as fit() but continues from an existing model and statistics.
FitResult resume_fit(std::span<const EmbeddingBatch> train_shards,
                     std::span<const EmbeddingBatch> val_shards, const FitConfig& config,
                     DpmmModel model, SufficientStats stats);

}  // namespace dpmm
