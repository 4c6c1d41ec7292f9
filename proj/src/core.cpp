// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#include "dpmm/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "dpmm/error.hpp"
#include "dpmm/kernels.hpp"

namespace dpmm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void check_sticks(std::span<const double> sticks) {
  require(!sticks.empty(), Errc::invalid_argument, "stick vector is empty");
  for (double v : sticks) {
    if (!(v > 0.0 && v <= 1.0)) {
      fail(Errc::invalid_argument, "stick fraction outside (0, 1]: " + std::to_string(v));
    }
  }
  require(sticks.back() == 1.0, Errc::invalid_argument, "last stick fraction must be exactly 1");
}

}  // namespace

std::vector<double> stick_breaking_weights(std::span<const double> sticks) {
  check_sticks(sticks);
  std::vector<double> pi(sticks.size());
  double remaining = 1.0;
  for (std::size_t k = 0; k < sticks.size(); ++k) {
    pi[k] = sticks[k] * remaining;
    remaining *= 1.0 - sticks[k];
  }
  return pi;
}

std::vector<double> sticks_from_weights(std::span<const double> weights) {
  require(!weights.empty(), Errc::invalid_argument, "weight vector is empty");
  std::vector<double> sticks(weights.size(), 1.0);
  double remaining = 1.0;
  for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
    require(weights[k] >= 0.0, Errc::invalid_argument, "negative weight");
    if (remaining <= 0.0) break;
    sticks[k] = std::clamp(weights[k] / remaining, std::numeric_limits<double>::min(), 1.0);
    remaining -= weights[k];
  }
  return sticks;
}

std::vector<double> DpmmModel::weights() const { return stick_breaking_weights(sticks); }

void DpmmModel::validate(double var_floor) const {
  require(K >= 1 && D >= 1, Errc::invalid_argument, "model must have K >= 1 and D >= 1");
  require(means.rows() == K && means.cols() == D, Errc::dimension_mismatch,
          "model means shape does not match K x D");
  require(vars.rows() == K && vars.cols() == D, Errc::dimension_mismatch,
          "model vars shape does not match K x D");
  require(sticks.size() == K, Errc::dimension_mismatch, "model stick count does not match K");
  check_sticks(sticks);
  require(alpha > 0.0 && std::isfinite(alpha), Errc::invalid_argument,
          "concentration must be positive and finite");
  for (double v : vars.values()) {
    require(v >= var_floor, Errc::invalid_argument, "variance entry below the floor");
  }
}

double diag_gaussian_logpdf(std::span<const double> y, std::span<const double> mean,
                            std::span<const double> var) {
  require(y.size() == mean.size() && y.size() == var.size(), Errc::dimension_mismatch,
          "dimension mismatch in gaussian log density");
  double acc = 0.0;
  for (std::size_t d = 0; d < y.size(); ++d) {
    require(var[d] > 0.0, Errc::invalid_argument, "nonpositive variance");
    const double diff = y[d] - mean[d];
    acc += std::log(2.0 * std::numbers::pi * var[d]) + diff * diff / var[d];
  }
  return -0.5 * acc;
}

ComponentCache::ComponentCache(const DpmmModel& model)
    : inv_vars(model.K, model.D), log_norm(model.K), log_weights(model.K) {
  const auto pi = model.weights();
  for (std::size_t k = 0; k < model.K; ++k) {
    double log_det = 0.0;
    for (std::size_t d = 0; d < model.D; ++d) {
      const double v = model.vars(k, d);
      require(v > 0.0, Errc::invalid_argument, "nonpositive variance");
      inv_vars(k, d) = 1.0 / v;
      log_det += std::log(v);
    }
    log_norm[k] = -0.5 * (static_cast<double>(model.D) * kLog2Pi + log_det);
    log_weights[k] = pi[k] > 0.0 ? std::log(pi[k]) : kNegInf;
  }
}

double log_sum_exp(std::span<const double> values) noexcept {
  double mx = kNegInf;
  for (double v : values) mx = std::max(mx, v);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : values) s += std::exp(v - mx);
  return mx + std::log(s);
}

namespace {

// Joint log densities log pi_k + log N(y_n | k) for one row, only over
// components with nonzero weight (their indices are in `active`).
struct ActiveComponents {
  std::vector<std::size_t> index;
  std::vector<double> means;
  std::vector<double> inv_vars;
  std::vector<double> bias;
};

ActiveComponents pack_active(const DpmmModel& model) {
  const ComponentCache cache(model);
  ActiveComponents a;
  for (std::size_t k = 0; k < model.K; ++k) {
    if (cache.log_weights[k] == kNegInf) continue;
    a.index.push_back(k);
    const auto mu = model.means.row(k);
    const auto iv = cache.inv_vars.row(k);
    a.means.insert(a.means.end(), mu.begin(), mu.end());
    a.inv_vars.insert(a.inv_vars.end(), iv.begin(), iv.end());
    a.bias.push_back(cache.log_norm[k] + cache.log_weights[k]);
  }
  return a;
}

void check_dims(const EmbeddingBatch& batch, const DpmmModel& model) {
  if (batch.N() > 0 && batch.D() != model.D) {
    fail(Errc::dimension_mismatch, "dimension mismatch: batch D=" + std::to_string(batch.D()) +
                                       ", model D=" + std::to_string(model.D));
  }
}

}  // namespace

Matrix responsibilities(const EmbeddingBatch& batch, const DpmmModel& model) {
  check_dims(batch, model);
  const auto active = pack_active(model);
  const auto& kern = kernels::active();
  const std::size_t A = active.index.size();
  Matrix resp(batch.N(), model.K, 0.0);
  std::vector<double> joint(A);
  for (std::size_t n = 0; n < batch.N(); ++n) {
    kern.diag_quadratic(batch.data.row(n).data(), active.means.data(), active.inv_vars.data(),
                        active.bias.data(), A, model.D, joint.data());
    double mx = kNegInf;
    for (double v : joint) mx = std::max(mx, v);
    if (!std::isfinite(mx)) {
      fail(Errc::numeric, "all component log densities are non-finite for row " +
                              std::to_string(n));
    }
    double total = 0.0;
    for (double& v : joint) {
      v = std::exp(v - mx);
      total += v;
    }
    const double inv_total = 1.0 / total;
    auto out = resp.row(n);
    for (std::size_t a = 0; a < A; ++a) out[active.index[a]] = joint[a] * inv_total;
  }
  return resp;
}

double mixture_log_likelihood(const EmbeddingBatch& batch, const DpmmModel& model) {
  check_dims(batch, model);
  const auto active = pack_active(model);
  const auto& kern = kernels::active();
  std::vector<double> joint(active.index.size());
  double total = 0.0;
  for (std::size_t n = 0; n < batch.N(); ++n) {
    kern.diag_quadratic(batch.data.row(n).data(), active.means.data(), active.inv_vars.data(),
                        active.bias.data(), active.index.size(), model.D, joint.data());
    total += log_sum_exp(joint);
  }
  return total;
}

SyntheticSample sample_synthetic(const SyntheticSpec& spec) {
  require(spec.count > 0, Errc::invalid_argument, "synthetic count must be positive");
  const std::size_t M = spec.true_weights.size();
  require(M >= 1, Errc::invalid_argument, "at least one synthetic component is required");
  require(spec.true_means.rows() == M && spec.true_vars.rows() == M &&
              spec.true_means.cols() == spec.true_vars.cols() && spec.true_means.cols() >= 1,
          Errc::dimension_mismatch, "synthetic spec shapes are inconsistent");
  double wsum = 0.0;
  for (double w : spec.true_weights) {
    require(w >= 0.0, Errc::invalid_argument, "negative synthetic weight");
    wsum += w;
  }
  require(std::abs(wsum - 1.0) <= 1e-9, Errc::invalid_argument,
          "synthetic weights must sum to 1");
  for (double v : spec.true_vars.values()) {
    require(v > 0.0, Errc::invalid_argument, "synthetic variances must be positive");
  }

  const std::size_t D = spec.true_means.cols();
  std::mt19937_64 rng(spec.seed);
  std::discrete_distribution<std::size_t> pick(spec.true_weights.begin(),
                                               spec.true_weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticSample out;
  out.batch = EmbeddingBatch(Matrix(spec.count, D));
  out.labels.resize(spec.count);
  for (std::size_t n = 0; n < spec.count; ++n) {
    const std::size_t m = pick(rng);
    out.labels[n] = m;
    for (std::size_t d = 0; d < D; ++d) {
      out.batch.data(n, d) = spec.true_means(m, d) + std::sqrt(spec.true_vars(m, d)) * normal(rng);
    }
  }
  return out;
}

}  // namespace dpmm
