// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#include "dpmm/score.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpmm/error.hpp"
#include "dpmm/fit.hpp"
#include "dpmm/kernels.hpp"

namespace dpmm {

std::string_view to_string(ScoreMethod method) noexcept {
  switch (method) {
    case ScoreMethod::cosine:
      return "cosine";
    case ScoreMethod::euclidean:
      return "euclidean";
    case ScoreMethod::likelihood:
      return "likelihood";
  }
  return "unknown";
}

std::optional<ScoreMethod> parse_score_method(std::string_view name) noexcept {
  if (name == "cosine") return ScoreMethod::cosine;
  if (name == "euclidean") return ScoreMethod::euclidean;
  if (name == "likelihood") return ScoreMethod::likelihood;
  return std::nullopt;
}

NormalizedBatch normalize_rows(const EmbeddingBatch& batch) {
  NormalizedBatch out{batch, 0};
  for (std::size_t n = 0; n < batch.N(); ++n) {
    auto row = out.batch.data.row(n);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) {
      ++out.degenerate_rows;
      continue;
    }
    for (double& v : row) v /= norm;
  }
  out.batch.normalized = true;
  return out;
}

namespace {

// Effective prototypes packed contiguously, with what each method needs.
struct Prototypes {
  std::vector<std::size_t> index;
  std::vector<double> means;
  std::vector<double> norms;
  std::vector<double> inv_vars;
  std::vector<double> log_norm;
};

Prototypes gather(const EmbeddingBatch& batch, const DpmmModel& model, ScoreMethod method,
                  double t_pi) {
  if (batch.N() > 0 && batch.D() != model.D) {
    fail(Errc::dimension_mismatch, "dimension mismatch: batch D=" + std::to_string(batch.D()) +
                                       ", model D=" + std::to_string(model.D));
  }
  if (model.normalized_input != batch.normalized) {
    fail(Errc::invalid_argument,
         model.normalized_input
             ? "model was fit on normalized embeddings; normalize the batch first"
             : "model was fit on raw embeddings but the batch is normalized");
  }
  Prototypes p;
  p.index = effective_components(model, t_pi);
  std::optional<ComponentCache> cache;
  if (method == ScoreMethod::likelihood) cache.emplace(model);
  for (std::size_t k : p.index) {
    const auto mu = model.means.row(k);
    p.means.insert(p.means.end(), mu.begin(), mu.end());
    double sq = 0.0;
    for (double v : mu) sq += v * v;
    p.norms.push_back(std::sqrt(sq));
    if (cache) {
      const auto iv = cache->inv_vars.row(k);
      p.inv_vars.insert(p.inv_vars.end(), iv.begin(), iv.end());
      p.log_norm.push_back(cache->log_norm[k]);
    }
  }
  return p;
}

// Proximity per prototype, oriented so that larger is closer.
void closeness(const Prototypes& p, std::span<const double> y, ScoreMethod method,
               std::vector<double>& out) {
  const auto& kern = kernels::active();
  const std::size_t A = p.index.size();
  const std::size_t D = y.size();
  out.resize(A);
  switch (method) {
    case ScoreMethod::cosine: {
      kern.dot_rows(y.data(), p.means.data(), A, D, out.data());
      double sq = 0.0;
      for (double v : y) sq += v * v;
      const double ynorm = std::sqrt(sq);
      for (std::size_t a = 0; a < A; ++a) {
        const double denom = ynorm * p.norms[a];
        out[a] = denom > 0.0 ? out[a] / denom : 0.0;
      }
      break;
    }
    case ScoreMethod::euclidean:
      kern.sqdist_rows(y.data(), p.means.data(), A, D, out.data());
      for (double& v : out) v = -v;
      break;
    case ScoreMethod::likelihood:
      kern.diag_quadratic(y.data(), p.means.data(), p.inv_vars.data(), p.log_norm.data(), A, D,
                          out.data());
      break;
  }
}

std::size_t best_of(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < values.size(); ++a) {
    if (values[a] > values[best]) best = a;
  }
  return best;
}

}  // namespace

std::vector<double> anomaly_scores(const EmbeddingBatch& batch, const DpmmModel& model,
                                   ScoreMethod method, double t_pi) {
  const auto protos = gather(batch, model, method, t_pi);
  std::vector<double> scores(batch.N());
  std::vector<double> close;
  for (std::size_t n = 0; n < batch.N(); ++n) {
    closeness(protos, batch.data.row(n), method, close);
    const double best = close[best_of(close)];
    switch (method) {
      case ScoreMethod::cosine:
        scores[n] = 1.0 - best;
        break;
      case ScoreMethod::euclidean:
        scores[n] = std::sqrt(std::max(0.0, -best));
        break;
      case ScoreMethod::likelihood:
        scores[n] = -best;
        break;
    }
  }
  return scores;
}

std::vector<std::size_t> component_assignment(const EmbeddingBatch& batch,
                                              const DpmmModel& model, ScoreMethod method,
                                              double t_pi) {
  const auto protos = gather(batch, model, method, t_pi);
  std::vector<std::size_t> out(batch.N());
  std::vector<double> close;
  for (std::size_t n = 0; n < batch.N(); ++n) {
    closeness(protos, batch.data.row(n), method, close);
    out[n] = protos.index[best_of(close)];
  }
  return out;
}

AnomalyMap patch_to_pixel(const PatchGrid& grid, std::size_t H, std::size_t W) {
  const std::size_t gh = grid.values.rows();
  const std::size_t gw = grid.values.cols();
  require(gh >= 1 && gw >= 1, Errc::invalid_argument, "patch grid must be at least 1x1");
  require(H >= 1 && W >= 1, Errc::invalid_argument, "target size must be positive");
  require(H >= gh && W >= gw, Errc::invalid_argument, "target size is smaller than the patch grid");
  for (double v : grid.values.values()) {
    require(std::isfinite(v), Errc::numeric, "patch grid contains non-finite scores");
  }

  // Source coordinate of each output pixel centre, clamped to the outermost
  // patch centres.
  auto axis = [](std::size_t out, std::size_t in) {
    std::vector<std::pair<std::size_t, double>> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const double hi = static_cast<double>(in - 1);
    for (std::size_t p = 0; p < out; ++p) {
      const double u = std::clamp((static_cast<double>(p) + 0.5) * scale - 0.5, 0.0, hi);
      const auto i0 = std::min(static_cast<std::size_t>(u), in - 1);
      taps[p] = {i0, u - static_cast<double>(i0)};
    }
    return taps;
  };
  const auto rows = axis(H, gh);
  const auto cols = axis(W, gw);

  AnomalyMap map{Matrix(H, W), {}};
  for (std::size_t r = 0; r < H; ++r) {
    const auto [i0, ty] = rows[r];
    const std::size_t i1 = std::min(i0 + 1, gh - 1);
    for (std::size_t c = 0; c < W; ++c) {
      const auto [j0, tx] = cols[c];
      const std::size_t j1 = std::min(j0 + 1, gw - 1);
      const double top = grid.values(i0, j0) + tx * (grid.values(i0, j1) - grid.values(i0, j0));
      const double bottom =
          grid.values(i1, j0) + tx * (grid.values(i1, j1) - grid.values(i1, j0));
      map.values(r, c) = top + ty * (bottom - top);
    }
  }
  return map;
}

double select_threshold(std::span<const double> normal_scores, double target_fpr) {
  require(!normal_scores.empty(), Errc::invalid_argument, "no normal scores to calibrate on");
  require(target_fpr > 0.0 && target_fpr < 1.0, Errc::invalid_argument,
          "target false positive rate must lie in (0, 1)");
  std::vector<double> sorted(normal_scores.begin(), normal_scores.end());
  for (double v : sorted) {
    require(std::isfinite(v), Errc::numeric, "normal scores contain non-finite values");
  }
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double nd = static_cast<double>(n);
  // Largest count a of scores allowed above the threshold with a / n <= target.
  auto allowed = static_cast<std::size_t>(std::floor(target_fpr * nd));
  while (allowed + 1 < n && static_cast<double>(allowed + 1) / nd <= target_fpr) ++allowed;
  while (allowed > 0 && static_cast<double>(allowed) / nd > target_fpr) --allowed;
  allowed = std::min(allowed, n - 1);
  return sorted[n - 1 - allowed];
}

BinaryMask binarize(const AnomalyMap& map, double threshold) {
  BinaryMask mask{map.values.rows(), map.values.cols(), {}};
  mask.bits.resize(map.values.size());
  const auto& v = map.values.values();
  for (std::size_t i = 0; i < v.size(); ++i) mask.bits[i] = v[i] > threshold ? 1 : 0;
  return mask;
}

}  // namespace dpmm
