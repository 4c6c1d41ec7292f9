// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "dpmm/core.hpp"
#include "dpmm/dataio.hpp"
#include "dpmm/error.hpp"
#include "dpmm/fit.hpp"
#include "dpmm/metrics.hpp"
#include "dpmm/score.hpp"
#include "support.hpp"

using namespace dpmm;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// Three well separated clusters in D=8; the data of criteria 1 to 3.
SyntheticSpec recovery_spec(std::size_t count, std::uint64_t seed) {
  Matrix means(3, 8);
  for (std::size_t m = 0; m < 3; ++m) means(m, m) = 3.0;
  return {means, Matrix(3, 8, 0.01), {0.5, 0.3, 0.2}, count, seed};
}

struct RecoveryRun {
  FitResult result;
  double seconds = 0.0;
};

const RecoveryRun& recovery_run() {
  static const RecoveryRun run = [] {
    const auto train = sample_synthetic(recovery_spec(20000, 2026));
    const auto val = sample_synthetic(recovery_spec(4000, 2027));
    FitConfig cfg;
    cfg.K = 50;
    cfg.gamma = 0.2;
    cfg.epochs = 20;
    cfg.seed = 7;
    const std::vector<EmbeddingBatch> t{train.batch}, v{val.batch};
    const auto start = Clock::now();
    RecoveryRun r{fit(t, v, cfg), 0.0};
    r.seconds = seconds_since(start);
    return r;
  }();
  return run;
}

Verdict synthetic_recovery() {
  const auto& run = recovery_run();
  const auto& model = run.result.model;
  const auto pi = model.weights();
  std::vector<std::size_t> eff;
  for (std::size_t k = 0; k < pi.size(); ++k) {
    if (pi[k] > 1e-3) eff.push_back(k);
  }
  std::sort(eff.begin(), eff.end(), [&](auto a, auto b) { return pi[a] > pi[b]; });
  std::size_t carrying = 0;
  double cum = 0.0;
  while (carrying < eff.size() && cum < 0.95) cum += pi[eff[carrying++]];

  const auto spec = recovery_spec(1, 0);
  std::vector<bool> used(carrying, false);
  double worst_mean = 0.0, worst_weight = 0.0;
  for (std::size_t m = 0; m < 3; ++m) {
    double best = INFINITY;
    std::size_t pick = 0;
    for (std::size_t c = 0; c < carrying; ++c) {
      if (used[c]) continue;
      double d2 = 0.0;
      for (std::size_t d = 0; d < 8; ++d) {
        const double diff = model.means(eff[c], d) - spec.true_means(m, d);
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        pick = c;
      }
    }
    if (best == INFINITY) {
      worst_mean = INFINITY;
      break;
    }
    used[pick] = true;
    worst_mean = std::max(worst_mean, std::sqrt(best));
    worst_weight = std::max(worst_weight, std::abs(pi[eff[pick]] - spec.true_weights[m]));
  }
  const bool pass =
      carrying == 3 && worst_mean <= 0.05 && worst_weight <= 0.05 && run.seconds < 30.0;
  return {pass, fmt("%zu components carry %.4f of the mass, max mean error %.4f, max weight "
                    "error %.4f, %.2f s",
                    carrying, cum, worst_mean, worst_weight, run.seconds)};
}

Verdict vanishing_components() {
  const auto pi = recovery_run().result.model.weights();
  const auto vanished = std::count_if(pi.begin(), pi.end(), [](double w) { return w <= 1e-3; });
  return {vanished >= 40, fmt("%td of 50 components end with weight <= 1e-3", vanished)};
}

Verdict full_batch_monotonicity() {
  const auto data = sample_synthetic(recovery_spec(20000, 2026)).batch;
  FitConfig cfg;
  cfg.K = 50;
  cfg.full_batch_mode = true;
  cfg.alpha_init = 1.0;
  cfg.seed = 7;
  auto [model, stats] = init_model(data, cfg);
  BatchedEm em(std::move(model), std::move(stats), cfg);
  double prev = mixture_log_likelihood(data, em.model());
  double worst = INFINITY;
  bool alpha_fixed = true;
  for (int it = 0; it < 50; ++it) {
    em.step(data);
    alpha_fixed = alpha_fixed && em.model().alpha == 1.0;
    const double ll = mixture_log_likelihood(data, em.model());
    worst = std::min(worst, ll - prev);
    prev = ll;
  }
  return {worst >= -1e-8 && alpha_fixed,
          fmt("smallest per-step change %.3e over 50 iterations, final %.6f", worst, prev)};
}

Verdict m_step_consistency() {
  std::mt19937_64 rng(404);
  FitConfig cfg;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 1 + trial % 60, D = 1 + trial % 4;
    SufficientStats s;
    s.p_bar = dpmm::testing::random_simplex(rng, K);
    s.m_bar = Matrix(K, D);
    s.c_bar = Matrix(K, D, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t d = 0; d < D; ++d) s.c_bar(k, d) = s.p_bar[k] * 2.0;
    }
    s.batch_size = 1 + trial * 37;
    const auto prev = dpmm::testing::random_model(rng, K, D);
    const auto pi = m_step(s, prev, 1.0, cfg).weights();
    for (std::size_t k = 0; k < K; ++k) worst = std::max(worst, std::abs(pi[k] - s.p_bar[k]));
  }
  return {worst <= 1e-12, fmt("max |pi - p_bar| = %.3e over 100 random statistics", worst)};
}

Verdict auroc_oracle() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<std::size_t> len(2, 200);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = dpmm::testing::random_labeled(rng, len(rng));
    worst = std::max(worst, std::abs(auroc(s) - dpmm::testing::pair_count_auroc(s)));
  }
  const double fixed = auroc({{0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}});
  return {worst <= 1e-12 && std::abs(fixed - 0.75) <= 1e-12,
          fmt("max deviation from pair counting %.3e, fixed case %.12f", worst, fixed)};
}

Verdict aupr_oracle() {
  std::mt19937_64 rng(606);
  std::uniform_int_distribution<std::size_t> len(2, 200);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = dpmm::testing::random_labeled(rng, len(rng));
    worst = std::max(worst, std::abs(aupr(s) - dpmm::testing::threshold_enumeration_ap(s)));
  }
  return {worst <= 1e-12, fmt("max deviation from threshold enumeration %.3e", worst)};
}

Verdict cosine_scale_invariance() {
  std::mt19937_64 rng(707);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 1 + trial % 20, D = 1 + trial % 16;
    const auto model = dpmm::testing::random_model(rng, K, D);
    const EmbeddingBatch batch(dpmm::testing::random_matrix(rng, 32, D, -5, 5));
    const auto base = anomaly_scores(batch, model, ScoreMethod::cosine, 1e-6);
    for (double c : {0.1, 3.0, 1000.0}) {
      EmbeddingBatch s = batch;
      for (double& v : s.data.values()) v *= c;
      const auto other = anomaly_scores(s, model, ScoreMethod::cosine, 1e-6);
      for (std::size_t n = 0; n < base.size(); ++n) worst = std::max(worst, std::abs(other[n] - base[n]));
    }
  }
  return {worst <= 1e-9, fmt("max score change under scaling %.3e", worst)};
}

Verdict threshold_calibration() {
  std::mt19937_64 rng(808);
  std::uniform_int_distribution<std::size_t> len(1, 5000);
  std::normal_distribution<double> z(0, 1);
  std::uniform_int_distribution<int> coarse(0, 50);
  std::size_t checks = 0, violations = 0;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> s(len(rng));
    for (double& v : s) v = trial % 3 == 0 ? 0.02 * coarse(rng) : z(rng);
    for (double target : {0.01, 0.05, 0.10}) {
      ++checks;
      const double t = select_threshold(s, target);
      const auto above = std::count_if(s.begin(), s.end(), [&](double v) { return v > t; });
      bool ok = static_cast<double>(above) / s.size() <= target;
      double next = -INFINITY;
      for (double v : s) {
        if (v < t) next = std::max(next, v);
      }
      if (next > -INFINITY) {
        const auto more = std::count_if(s.begin(), s.end(), [&](double v) { return v > next; });
        ok = ok && static_cast<double>(more) / s.size() > target;
      }
      violations += ok ? 0 : 1;
    }
  }
  return {violations == 0, fmt("%zu violations in %zu calibrations", violations, checks)};
}

Verdict interpolation() {
  const auto flat = patch_to_pixel(PatchGrid{Matrix(4, 6, 0.37)}, 448, 448);
  const bool constant = std::all_of(flat.values.values().begin(), flat.values.values().end(),
                                    [](double v) { return v == 0.37; });
  Matrix col(2, 1);
  col(1, 0) = 1.0;
  const auto c = patch_to_pixel(PatchGrid{col}, 4, 1);
  const double want[] = {0.0, 0.25, 0.75, 1.0};
  double worst = 0.0;
  for (std::size_t r = 0; r < 4; ++r) worst = std::max(worst, std::abs(c.values(r, 0) - want[r]));
  return {constant && worst <= 1e-12,
          fmt("constant map exact: %s, 2x1 to 4x1 max error %.3e", constant ? "yes" : "no", worst)};
}

Verdict digamma_values() {
  const double e1 = std::abs(digamma(1.0) - -0.57721566490153286061);
  const double e2 = std::abs(digamma(2.0) - 0.42278433509846713939);
  const double e3 = std::abs(digamma(0.5) - -1.96351002602142347944);
  const double worst = std::max({e1, e2, e3});
  return {worst <= 1e-10, fmt("errors %.2e %.2e %.2e", e1, e2, e3)};
}

Verdict permutation_test() {
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> u(0.5, 0.85);
  PairedImageScores same{{}, {}, 10000, 11};
  PairedImageScores shifted{{}, {}, 10000, 11};
  for (int i = 0; i < 30; ++i) {
    const double b = u(rng);
    same.a.push_back(b);
    same.b.push_back(b);
    shifted.a.push_back(b + 0.1);
    shifted.b.push_back(b);
  }
  const double p_same = paired_permutation_test(same);
  const double p_shift = paired_permutation_test(shifted);
  const bool repeat = paired_permutation_test(shifted) == p_shift &&
                      paired_permutation_test(same) == p_same;
  return {p_same == 1.0 && p_shift <= 0.01 && repeat,
          fmt("identical pairs p = %.4f, shifted pairs p = %.6f, repeatable: %s", p_same, p_shift,
              repeat ? "yes" : "no")};
}

struct ScratchDir {
  fs::path path;
  ScratchDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("dpmm_acceptance_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

Verdict end_to_end() {
  ScratchDir dir("pipeline");
  const std::string cli = DPMM_CLI_PATH;
  const std::string d = dir.path.string();
  const std::string common = " --components 3 --dim 8 --grid 32 --pixels 224 --layout-seed 77";
  const std::vector<std::string> steps{
      "synth --out " + d + "/train/t.adne --count 20480 --seed 1" + common,
      "synth --out " + d + "/val/v.adne --count 4096 --seed 2" + common,
      "synth --out " + d + "/test/t.adne --count 10240 --seed 3 --anomaly-fraction 0.6" + common,
      "fit --train " + d + "/train --val " + d + "/val --out " + d + "/m.dpmm --epochs 10",
      "score --model " + d + "/m.dpmm --in " + d + "/test --out " + d +
          "/scores --method cosine --height 224 --width 224",
      "eval --scores " + d + "/scores --masks-from-shards " + d + "/test --fpr-list 0.01,0.05,0.10" +
          " --val " + d + "/val --model " + d + "/m.dpmm --report " + d + "/report.tsv",
  };
  const auto start = Clock::now();
  for (const auto& step : steps) {
    const std::string cmd = "\"" + cli + "\" " + step + " > \"" + d + "/log.txt\" 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
      std::ifstream log(d + "/log.txt");
      std::string first;
      std::getline(log, first);
      return {false, "step failed (" + std::to_string(rc) + "): " + step + ": " + first};
    }
  }
  const double secs = seconds_since(start);
  std::ifstream report(d + "/report.tsv");
  std::string line;
  double auc = -1.0;
  while (std::getline(report, line)) {
    if (line.rfind("pixel_auroc\t", 0) == 0) auc = std::stod(line.substr(12));
  }
  return {auc > 0.95 && secs < 60.0, fmt("pooled pixel AUROC %.4f, all steps exit 0, %.1f s", auc, secs)};
}

template <class Write, class Read, class Same>
std::size_t round_trips(int n, Write write, Read read, Same same) {
  std::size_t failures = 0;
  for (int i = 0; i < n; ++i) failures += same(read(write(i))) ? 0 : 1;
  return failures;
}

float random_float(std::mt19937_64& rng) {
  const auto bits = static_cast<std::uint32_t>(rng());
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

// Every strict prefix and a batch of random byte flips must end in a
// dpmm::Error (or, for flips, a successful read), never anything else.
std::size_t corruption_escapes(const fs::path& path, const std::function<void()>& read,
                               std::mt19937_64& rng) {
  std::ifstream in(path, std::ios::binary);
  const std::vector<char> good{std::istreambuf_iterator<char>(in), {}};
  in.close();
  auto put = [&](const std::vector<char>& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  std::size_t escapes = 0;
  for (std::size_t cut = 0; cut < good.size(); ++cut) {
    put(std::vector<char>(good.begin(), good.begin() + static_cast<long>(cut)));
    try {
      read();
      ++escapes;
    } catch (const Error& e) {
      if (e.code() != Errc::truncated && e.code() != Errc::bad_magic) ++escapes;
    } catch (...) {
      ++escapes;
    }
  }
  for (int trial = 0; trial < 500; ++trial) {
    auto bad = good;
    bad[rng() % bad.size()] ^= static_cast<char>(1 + rng() % 255);
    put(bad);
    try {
      read();
    } catch (const Error&) {
    } catch (...) {
      ++escapes;
    }
  }
  put(good);
  return escapes;
}

Verdict file_formats() {
  ScratchDir dir("formats");
  std::mt19937_64 rng(1313);
  const fs::path shard_path = dir.path / "s.adne", cp_path = dir.path / "m.dpmm",
                 map_path = dir.path / "m.amap", mask_path = dir.path / "m.pgm";

  io::Shard shard;
  const auto shard_fail = round_trips(
      1000,
      [&](int) {
        shard = io::Shard{static_cast<std::uint32_t>(1 + rng() % 5), rng() % 2 == 1, {}};
        for (std::size_t r = rng() % 4; r > 0; --r) {
          io::ShardRecord rec{"img/" + std::to_string(rng()), static_cast<std::uint32_t>(1 + rng() % 4),
                              static_cast<std::uint32_t>(1 + rng() % 4), std::nullopt, {}};
          if (rng() % 2) rec.mask_path = "masks/" + std::to_string(r) + ".pgm";
          rec.data.resize(std::size_t{rec.grid_h} * rec.grid_w * shard.D);
          for (float& f : rec.data) f = random_float(rng);
          shard.records.push_back(std::move(rec));
        }
        io::write_shard(shard_path, shard);
        return shard_path;
      },
      [](const fs::path& p) { return io::read_shard(p); },
      [&](const io::Shard& back) {
        if (back.D != shard.D || back.normalized != shard.normalized ||
            back.records.size() != shard.records.size()) {
          return false;
        }
        for (std::size_t r = 0; r < back.records.size(); ++r) {
          const auto& a = back.records[r];
          const auto& b = shard.records[r];
          if (a.image_id != b.image_id || a.grid_h != b.grid_h || a.grid_w != b.grid_w ||
              a.mask_path != b.mask_path ||
              std::memcmp(a.data.data(), b.data.data(), a.data.size() * 4) != 0) {
            return false;
          }
        }
        return true;
      });

  io::Checkpoint cp;
  const auto cp_fail = round_trips(
      1000,
      [&](int i) {
        const std::size_t K = 1 + rng() % 8, D = 1 + rng() % 6;
        cp = io::Checkpoint{dpmm::testing::random_model(rng, K, D, i % 3 == 0), std::nullopt};
        if (i % 2 == 0) {
          cp.stats = SufficientStats{dpmm::testing::random_simplex(rng, K),
                                     dpmm::testing::random_matrix(rng, K, D),
                                     dpmm::testing::random_matrix(rng, K, D, 0, 3),
                                     static_cast<std::size_t>(1 + rng() % 50000)};
        }
        io::write_checkpoint(cp_path, cp);
        return cp_path;
      },
      [](const fs::path& p) { return io::read_checkpoint(p); },
      [&](const io::Checkpoint& back) { return back == cp; });

  AnomalyMap map;
  const auto map_fail = round_trips(
      1000,
      [&](int) {
        map = AnomalyMap{Matrix(1 + rng() % 16, 1 + rng() % 16), "m"};
        for (double& v : map.values.values()) v = static_cast<double>(random_float(rng));
        io::write_map(map_path, map);
        return map_path;
      },
      [](const fs::path& p) { return io::read_map(p); },
      [&](const AnomalyMap& back) {
        if (back.values.rows() != map.values.rows() || back.values.cols() != map.values.cols()) {
          return false;
        }
        for (std::size_t i = 0; i < map.values.size(); ++i) {
          const auto a = static_cast<float>(back.values.values()[i]);
          const auto b = static_cast<float>(map.values.values()[i]);
          if (std::memcmp(&a, &b, 4) != 0) return false;
        }
        return true;
      });

  BinaryMask mask;
  const auto mask_fail = round_trips(
      1000,
      [&](int) {
        mask = BinaryMask{1 + rng() % 20, 1 + rng() % 20, {}};
        mask.bits.resize(mask.H * mask.W);
        for (auto& b : mask.bits) b = rng() % 2;
        io::write_mask_pgm(mask_path, mask);
        return mask_path;
      },
      [](const fs::path& p) { return io::read_mask_pgm(p); },
      [&](const BinaryMask& back) { return back == mask; });

  std::size_t escapes = 0;
  escapes += corruption_escapes(shard_path, [&] { io::read_shard(shard_path); }, rng);
  escapes += corruption_escapes(cp_path, [&] { io::read_checkpoint(cp_path); }, rng);
  escapes += corruption_escapes(map_path, [&] { io::read_map(map_path); }, rng);
  escapes += corruption_escapes(mask_path, [&] { io::read_mask_pgm(mask_path); }, rng);

  const std::size_t failures = shard_fail + cp_fail + map_fail + mask_fail;
  return {failures == 0 && escapes == 0,
          fmt("round-trip mismatches shard %zu checkpoint %zu map %zu mask %zu; unstructured "
              "corruption outcomes %zu",
              shard_fail, cp_fail, map_fail, mask_fail, escapes)};
}

// Directions cluster around a few unit vectors; every point carries a random
// radius (radial noise). Anomalies point away from all clusters.
Verdict normalization_ablation() {
  constexpr std::size_t D = 16, M = 4;
  std::mt19937_64 rng(1414);
  std::normal_distribution<double> z(0, 1);
  std::lognormal_distribution<double> radius(0.0, 0.35);
  Matrix centres(M + 1, D);
  for (std::size_t m = 0; m <= M; ++m) {
    double sq = 0.0;
    for (std::size_t d = 0; d < D; ++d) sq += std::pow(centres(m, d) = z(rng), 2);
    for (std::size_t d = 0; d < D; ++d) centres(m, d) /= std::sqrt(sq);
  }
  auto draw = [&](std::size_t count, bool anomalous, std::vector<std::uint8_t>* labels) {
    Matrix out(count, D);
    std::bernoulli_distribution coin(0.3);
    std::uniform_int_distribution<std::size_t> pick(0, M - 1);
    for (std::size_t n = 0; n < count; ++n) {
      const bool a = anomalous && coin(rng);
      const std::size_t c = a ? M : pick(rng);
      double sq = 0.0;
      for (std::size_t d = 0; d < D; ++d) sq += std::pow(out(n, d) = centres(c, d) + 0.08 * z(rng), 2);
      const double r = radius(rng) / std::sqrt(sq);
      for (std::size_t d = 0; d < D; ++d) out(n, d) *= r;
      if (labels) labels->push_back(a ? 1 : 0);
    }
    return EmbeddingBatch(std::move(out));
  };
  const auto train = draw(12000, false, nullptr);
  std::vector<std::uint8_t> labels;
  const auto test = draw(6000, true, &labels);

  FitConfig cfg;
  cfg.K = 30;
  cfg.epochs = 10;
  cfg.batch_vectors = 1024;
  cfg.seed = 5;
  const std::vector<EmbeddingBatch> raw_train{train};
  const std::vector<EmbeddingBatch> norm_train{normalize_rows(train).batch};
  const auto raw_model = fit(raw_train, {}, cfg).model;
  const auto norm_model = fit(norm_train, {}, cfg).model;

  const auto cos_scores =
      anomaly_scores(normalize_rows(test).batch, norm_model, ScoreMethod::cosine, 1e-6);
  const auto euc_scores = anomaly_scores(test, raw_model, ScoreMethod::euclidean, 1e-6);
  const double cos_auc = auroc({cos_scores, labels});
  const double euc_auc = auroc({euc_scores, labels});
  return {cos_auc >= euc_auc,
          fmt("cosine with normalization AUROC %.4f, euclidean on raw embeddings AUROC %.4f",
              cos_auc, euc_auc)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"synthetic recovery", synthetic_recovery},
      {"vanishing components", vanishing_components},
      {"full-batch monotonicity", full_batch_monotonicity},
      {"m-step consistency", m_step_consistency},
      {"auroc oracle", auroc_oracle},
      {"aupr oracle", aupr_oracle},
      {"cosine scale invariance", cosine_scale_invariance},
      {"threshold calibration", threshold_calibration},
      {"interpolation", interpolation},
      {"digamma", digamma_values},
      {"permutation test", permutation_test},
      {"end-to-end pipeline", end_to_end},
      {"file formats", file_formats},
      {"normalization ablation", normalization_ablation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("[%s] %2zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                v.detail.c_str());
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  std::printf("%zu of %zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed;
}
