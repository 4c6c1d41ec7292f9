// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#include "dpmm/fit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "dpmm/error.hpp"
#include "dpmm/kernels.hpp"

namespace dpmm {
namespace {

constexpr double kStickMin = 1e-12;
constexpr double kStickMax = 1.0 - 1e-12;
constexpr double kStarved = 1e-12;

// Mixes the seed so the shuffle stream is not the init stream.
constexpr std::uint64_t kShuffleSalt = 0x9e3779b97f4a7c15ULL;

void check_simplex(std::span<const double> p, double tol, const char* what) {
  double s = 0.0;
  for (double v : p) {
    require(v >= 0.0, Errc::invalid_argument, what);
    s += v;
  }
  if (std::abs(s - 1.0) > tol) fail(Errc::invalid_argument, what);
}

std::vector<double> tail_sums(std::span<const double> p) {
  std::vector<double> tail(p.size(), 0.0);
  for (std::size_t k = p.size(); k-- > 1;) tail[k - 1] = tail[k] + p[k];
  return tail;
}

}  // namespace

void FitConfig::validate() const {
  require(K >= 1, Errc::invalid_argument, "K must be at least 1");
  require(gamma > 0.0 && gamma <= 1.0, Errc::invalid_argument, "gamma must lie in (0, 1]");
  require(batch_vectors >= 1, Errc::invalid_argument, "batch_vectors must be positive");
  require(alpha_init > 0.0 && std::isfinite(alpha_init), Errc::invalid_argument,
          "alpha_init must be positive");
  require(var_floor > 0.0, Errc::invalid_argument, "var_floor must be positive");
  require(alpha_low > 0.0 && alpha_low <= alpha_high, Errc::invalid_argument,
          "alpha clamp must satisfy 0 < low <= high");
}

std::pair<DpmmModel, SufficientStats> init_model(const EmbeddingBatch& first_batch,
                                                 const FitConfig& config) {
  config.validate();
  require(first_batch.N() >= 1, Errc::invalid_argument, "cannot initialize from an empty batch");
  const std::size_t N = first_batch.N();
  const std::size_t D = first_batch.D();
  const std::size_t K = config.K;

  std::vector<double> mean(D, 0.0), second(D, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    const auto y = first_batch.data.row(n);
    for (std::size_t d = 0; d < D; ++d) {
      mean[d] += y[d];
      second[d] += y[d] * y[d];
    }
  }
  for (std::size_t d = 0; d < D; ++d) {
    mean[d] /= static_cast<double>(N);
    second[d] /= static_cast<double>(N);
  }
  std::vector<double> var(D);
  for (std::size_t d = 0; d < D; ++d) {
    double centered = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double diff = first_batch.data(n, d) - mean[d];
      centered += diff * diff;
    }
    var[d] = std::max(centered / static_cast<double>(N), config.var_floor);
  }

  DpmmModel model;
  model.K = K;
  model.D = D;
  model.means = Matrix(K, D);
  model.vars = Matrix(K, D);
  model.sticks.resize(K);
  model.alpha = config.alpha_init;
  model.normalized_input = first_batch.normalized;

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, N - 1);
  for (std::size_t k = 0; k < K; ++k) {
    const auto src = first_batch.data.row(pick(rng));
    std::copy(src.begin(), src.end(), model.means.row(k).begin());
    std::copy(var.begin(), var.end(), model.vars.row(k).begin());
    model.sticks[k] = 1.0 / static_cast<double>(K - k);
  }
  model.sticks[K - 1] = 1.0;

  SufficientStats stats;
  stats.p_bar.assign(K, 1.0 / static_cast<double>(K));
  stats.m_bar = Matrix(K, D);
  stats.c_bar = Matrix(K, D);
  stats.batch_size = N;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t d = 0; d < D; ++d) {
      stats.m_bar(k, d) = stats.p_bar[k] * mean[d];
      stats.c_bar(k, d) = stats.p_bar[k] * second[d];
    }
  }
  return {std::move(model), std::move(stats)};
}

SufficientStats update_stats(const SufficientStats& stats, const Matrix& resp,
                             const EmbeddingBatch& batch, double gamma) {
  require(gamma > 0.0 && gamma <= 1.0, Errc::invalid_argument, "gamma must lie in (0, 1]");
  const std::size_t K = stats.p_bar.size();
  const std::size_t N = batch.N();
  const std::size_t D = stats.m_bar.cols();
  require(N >= 1, Errc::invalid_argument, "cannot update statistics from an empty batch");
  require(resp.rows() == N && resp.cols() == K, Errc::dimension_mismatch,
          "responsibility matrix does not match batch and component counts");
  require(batch.D() == D && stats.m_bar.rows() == K && stats.c_bar.rows() == K &&
              stats.c_bar.cols() == D,
          Errc::dimension_mismatch, "statistics do not match the batch dimensionality");

  std::vector<double> mass(K, 0.0);
  Matrix first(K, D, 0.0);
  Matrix second(K, D, 0.0);
  const auto& kern = kernels::active();
  for (std::size_t n = 0; n < N; ++n) {
    const auto r = resp.row(n);
    const double* y = batch.data.row(n).data();
    for (std::size_t k = 0; k < K; ++k) {
      if (r[k] == 0.0) continue;
      mass[k] += r[k];
      kern.accumulate_moments(r[k], y, D, first.row(k).data(), second.row(k).data());
    }
  }

  const double inv_n = 1.0 / static_cast<double>(N);
  const double keep = 1.0 - gamma;
  SufficientStats out;
  out.batch_size = stats.batch_size;
  out.p_bar.resize(K);
  out.m_bar = Matrix(K, D);
  out.c_bar = Matrix(K, D);
  for (std::size_t k = 0; k < K; ++k) {
    out.p_bar[k] = keep * stats.p_bar[k] + gamma * (mass[k] * inv_n);
    for (std::size_t d = 0; d < D; ++d) {
      out.m_bar(k, d) = keep * stats.m_bar(k, d) + gamma * (first(k, d) * inv_n);
      out.c_bar(k, d) = keep * stats.c_bar(k, d) + gamma * (second(k, d) * inv_n);
    }
  }
  return out;
}

DpmmModel m_step(const SufficientStats& stats, const DpmmModel& previous, double alpha_prev,
                 const FitConfig& config) {
  const std::size_t K = stats.p_bar.size();
  const std::size_t D = stats.m_bar.cols();
  check_simplex(stats.p_bar, 1e-6, "p_bar must be a simplex vector");
  require(previous.K == K && previous.D == D, Errc::dimension_mismatch,
          "statistics do not match the previous model");
  require(stats.batch_size >= 1, Errc::invalid_argument, "statistics batch size must be positive");
  require(alpha_prev > 0.0, Errc::invalid_argument, "alpha must be positive");

  DpmmModel model;
  model.K = K;
  model.D = D;
  model.alpha = previous.alpha;
  model.normalized_input = previous.normalized_input;
  model.means = Matrix(K, D);
  model.vars = Matrix(K, D);
  model.sticks.resize(K);

  for (std::size_t k = 0; k < K; ++k) {
    const double p = stats.p_bar[k];
    auto mu = model.means.row(k);
    auto var = model.vars.row(k);
    if (p < kStarved) {
      const auto prev = previous.means.row(k);
      std::copy(prev.begin(), prev.end(), mu.begin());
      std::fill(var.begin(), var.end(), config.var_floor);
      continue;
    }
    const double inv_p = 1.0 / p;
    for (std::size_t d = 0; d < D; ++d) {
      mu[d] = stats.m_bar(k, d) * inv_p;
      var[d] = std::max(stats.c_bar(k, d) * inv_p - mu[d] * mu[d], config.var_floor);
    }
  }

  // MAP of v_k under Beta(1 + C_k, alpha + C_{>k}) with C = B * p_bar, written
  // on the p_bar scale. A second shape parameter <= 1 puts the mode at v = 1.
  const auto tail = tail_sums(stats.p_bar);
  const double prior = (alpha_prev - 1.0) / static_cast<double>(stats.batch_size);
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const double rest = prior + tail[k];
    double v = rest <= 0.0 ? kStickMax : stats.p_bar[k] / (stats.p_bar[k] + rest);
    model.sticks[k] = std::clamp(v, kStickMin, kStickMax);
  }
  model.sticks[K - 1] = 1.0;
  return model;
}

double update_alpha(const SufficientStats& stats, double alpha_prev, const FitConfig& config) {
  require(alpha_prev > 0.0, Errc::invalid_argument, "alpha must be positive");
  const std::size_t K = stats.p_bar.size();
  if (K <= 1) return alpha_prev;
  const double B = static_cast<double>(stats.batch_size);
  const auto tail = tail_sums(stats.p_bar);
  double denom = 0.0;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const double count = B * stats.p_bar[k];
    const double beyond = B * tail[k];
    denom += digamma(alpha_prev + 1.0 + count + beyond) - digamma(alpha_prev + beyond);
  }
  if (!(denom > 0.0) || !std::isfinite(denom)) {
    fail(Errc::numeric, "concentration update has a nonpositive denominator");
  }
  const double alpha = static_cast<double>(K - 1) / denom;
  return std::clamp(alpha, config.alpha_low, config.alpha_high);
}

std::vector<std::size_t> effective_components(const DpmmModel& model, double t_pi) {
  require(t_pi >= 0.0, Errc::invalid_argument, "weight threshold must be nonnegative");
  const auto pi = model.weights();
  const double max_pi = *std::max_element(pi.begin(), pi.end());
  if (t_pi >= max_pi) {
    fail(Errc::invalid_argument, "weight threshold " + std::to_string(t_pi) +
                                     " leaves no components (max weight " +
                                     std::to_string(max_pi) + ")");
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < pi.size(); ++k) {
    if (pi[k] > t_pi) out.push_back(k);
  }
  return out;
}

BatchedEm::BatchedEm(DpmmModel model, SufficientStats stats, FitConfig config)
    : model_(std::move(model)), stats_(std::move(stats)), config_(config) {
  config_.validate();
  require(stats_.p_bar.size() == model_.K && stats_.m_bar.rows() == model_.K &&
              stats_.m_bar.cols() == model_.D,
          Errc::dimension_mismatch, "statistics do not match the model");
}

void BatchedEm::step(const EmbeddingBatch& batch) {
  const double gamma = config_.full_batch_mode ? 1.0 : config_.gamma;
  const Matrix resp = responsibilities(batch, model_);
  stats_ = update_stats(stats_, resp, batch, gamma);
  const double alpha_prev = model_.alpha;
  DpmmModel next = m_step(stats_, model_, alpha_prev, config_);
  if (!config_.full_batch_mode) next.alpha = update_alpha(stats_, alpha_prev, config_);
  model_ = std::move(next);
}

namespace {

struct Segment {
  std::size_t shard;
  std::size_t begin;
  std::size_t end;
};

using BatchPlan = std::vector<std::vector<Segment>>;

BatchPlan plan_batches(std::span<const EmbeddingBatch> shards, std::size_t batch_vectors) {
  BatchPlan plan;
  std::vector<Segment> current;
  std::size_t filled = 0;
  for (std::size_t s = 0; s < shards.size(); ++s) {
    std::size_t row = 0;
    const std::size_t n = shards[s].N();
    while (row < n) {
      const std::size_t take = std::min(n - row, batch_vectors - filled);
      current.push_back({s, row, row + take});
      row += take;
      filled += take;
      if (filled == batch_vectors) {
        plan.push_back(std::move(current));
        current.clear();
        filled = 0;
      }
    }
  }
  if (filled > 0) plan.push_back(std::move(current));
  return plan;
}

EmbeddingBatch materialize(std::span<const EmbeddingBatch> shards,
                           const std::vector<Segment>& segments) {
  std::size_t rows = 0;
  for (const auto& seg : segments) rows += seg.end - seg.begin;
  const std::size_t D = shards[segments.front().shard].D();
  EmbeddingBatch out(Matrix(rows, D), shards[segments.front().shard].normalized);
  double* dst = out.data.data();
  for (const auto& seg : segments) {
    const double* src = shards[seg.shard].data.row(seg.begin).data();
    dst = std::copy(src, src + (seg.end - seg.begin) * D, dst);
  }
  return out;
}

struct PreparedData {
  BatchPlan plan;
  std::size_t D = 0;
  bool normalized = false;
};

PreparedData prepare(std::span<const EmbeddingBatch> train,
                     std::span<const EmbeddingBatch> val, const FitConfig& config) {
  config.validate();
  std::size_t total = 0;
  PreparedData out;
  bool have_dim = false;
  for (const auto& shard : train) {
    if (shard.N() == 0) continue;
    if (!have_dim) {
      out.D = shard.D();
      out.normalized = shard.normalized;
      have_dim = true;
    }
    if (shard.D() != out.D) fail(Errc::dimension_mismatch, "dimension mismatch between shards");
    if (shard.normalized != out.normalized) {
      fail(Errc::invalid_argument, "training shards mix normalized and raw embeddings");
    }
    total += shard.N();
  }
  require(total > 0, Errc::invalid_argument, "training set is empty");
  for (const auto& shard : val) {
    if (shard.N() > 0 && shard.D() != out.D) {
      fail(Errc::dimension_mismatch, "dimension mismatch between training and validation shards");
    }
  }
  out.plan = plan_batches(train, config.full_batch_mode ? total : config.batch_vectors);
  return out;
}

double validation_score(std::span<const EmbeddingBatch> val, std::span<const EmbeddingBatch> train,
                        const DpmmModel& model) {
  const auto shards = val.empty() ? train : val;
  double ll = 0.0;
  for (const auto& shard : shards) ll += mixture_log_likelihood(shard, model);
  return std::isnan(ll) ? -std::numeric_limits<double>::infinity() : ll;
}

FitResult run_epochs(std::span<const EmbeddingBatch> train, std::span<const EmbeddingBatch> val,
                     const PreparedData& data, BatchedEm em) {
  const FitConfig& config = em.config();
  FitResult best{em.model(), em.stats(), {}};
  FitReport& report = best.report;
  std::mt19937_64 rng(config.seed ^ kShuffleSalt);
  std::vector<std::size_t> order(data.plan.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_ll = -std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b : order) em.step(materialize(train, data.plan[b]));
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const double ll = validation_score(val, train, em.model());
    const auto pi = em.model().weights();
    const auto eff = static_cast<std::size_t>(
        std::count_if(pi.begin(), pi.end(), [](double w) { return w > kDefaultWeightThreshold; }));
    report.val_log_likelihood.push_back(ll);
    report.effective_count.push_back(eff);
    report.epoch_seconds.push_back(seconds);
    if (!report.best_epoch || ll > best_ll) {
      best_ll = ll;
      report.best_epoch = epoch;
      best.model = em.model();
      best.stats = em.stats();
    }
  }
  if (report.best_epoch) {
    report.final_effective_components = report.effective_count[*report.best_epoch];
  } else {
    const auto pi = best.model.weights();
    report.final_effective_components = static_cast<std::size_t>(
        std::count_if(pi.begin(), pi.end(), [](double w) { return w > kDefaultWeightThreshold; }));
  }
  return best;
}

}  // namespace

FitResult fit(std::span<const EmbeddingBatch> train_shards,
              std::span<const EmbeddingBatch> val_shards, const FitConfig& config) {
  const auto data = prepare(train_shards, val_shards, config);
  auto [model, stats] = init_model(materialize(train_shards, data.plan.front()), config);
  return run_epochs(train_shards, val_shards, data,
                    BatchedEm(std::move(model), std::move(stats), config));
}

FitResult resume_fit(std::span<const EmbeddingBatch> train_shards,
                     std::span<const EmbeddingBatch> val_shards, const FitConfig& config,
                     DpmmModel model, SufficientStats stats) {
  const auto data = prepare(train_shards, val_shards, config);
  model.validate(config.var_floor);
  require(model.D == data.D, Errc::dimension_mismatch,
          "dimension mismatch between checkpoint and training shards");
  require(model.K == config.K, Errc::invalid_argument,
          "checkpoint truncation level differs from the requested K");
  require(model.normalized_input == data.normalized, Errc::invalid_argument,
          "checkpoint and training shards disagree on normalization");
  return run_epochs(train_shards, val_shards, data,
                    BatchedEm(std::move(model), std::move(stats), config));
}

}  // namespace dpmm
