// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "dpmm/core.hpp"
#include "dpmm/dataio.hpp"
#include "dpmm/error.hpp"
#include "dpmm/fit.hpp"
#include "dpmm/metrics.hpp"
#include "dpmm/score.hpp"

namespace dpmm::cli {
namespace fs = std::filesystem;

namespace {

// Raised for flag values that parse but make no sense together.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::io:
    case Errc::bad_magic:
    case Errc::unsupported_version:
    case Errc::truncated:
    case Errc::malformed:
      return kIo;
    case Errc::invalid_argument:
    case Errc::dimension_mismatch:
    case Errc::numeric:
      return kData;
  }
  return kData;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// One record of a shard file together with where it came from.
struct LoadedRecord {
  fs::path shard_dir;
  std::uint32_t D = 0;
  bool normalized = false;
  io::ShardRecord record;
};

std::vector<LoadedRecord> load_records(const fs::path& dir_or_file) {
  std::vector<LoadedRecord> out;
  for (const auto& path : io::list_shards(dir_or_file)) {
    auto shard = io::read_shard(path);
    for (auto& rec : shard.records) {
      out.push_back({path.parent_path(), shard.D, shard.normalized, std::move(rec)});
    }
  }
  return out;
}

EmbeddingBatch prepared_batch(const LoadedRecord& lr, bool normalize) {
  auto batch = io::to_batch(lr.record, lr.D, lr.normalized);
  if (normalize && !batch.normalized) {
    auto n = normalize_rows(batch);
    if (n.degenerate_rows > 0) {
      std::cerr << "warning: " << n.degenerate_rows << " zero-norm rows left unnormalized in '"
                << lr.record.image_id << "'\n";
    }
    return std::move(n.batch);
  }
  return batch;
}

struct ScoreSettings {
  ScoreMethod method = ScoreMethod::cosine;
  double t_pi = kDefaultWeightThreshold;
  std::size_t height = 448;
  std::size_t width = 448;
};

AnomalyMap score_record(const LoadedRecord& lr, const DpmmModel& model, const ScoreSettings& s) {
  const auto batch = prepared_batch(lr, model.normalized_input);
  const auto scores = anomaly_scores(batch, model, s.method, s.t_pi);
  PatchGrid grid{Matrix(lr.record.grid_h, lr.record.grid_w)};
  std::copy(scores.begin(), scores.end(), grid.values.data());
  auto map = patch_to_pixel(grid, s.height, s.width);
  map.image_id = lr.record.image_id;
  return map;
}

std::vector<double> pooled_pixel_scores(const std::vector<LoadedRecord>& records,
                                        const DpmmModel& model, const ScoreSettings& s,
                                        unsigned threads) {
  std::vector<AnomalyMap> maps(records.size());
  parallel_for(records.size(), threads,
               [&](std::size_t i) { maps[i] = score_record(records[i], model, s); });
  std::vector<double> pooled;
  for (const auto& m : maps) {
    pooled.insert(pooled.end(), m.values.values().begin(), m.values.values().end());
  }
  return pooled;
}

void check_fpr(double fpr) {
  if (!(fpr > 0.0 && fpr < 1.0)) throw UsageError("--fpr values must lie in (0, 1)");
}

ScoreMethod method_from(const std::string& name) {
  const auto m = parse_score_method(name);
  if (!m) throw UsageError("unknown score method '" + name + "'");
  return *m;
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  std::string out;
  std::size_t components = 3;
  std::size_t dim = 8;
  std::size_t count = 20000;
  std::uint64_t seed = 0;
  std::uint64_t layout_seed = 1234;
  std::uint32_t grid = 8;
  double spread = 3.0;
  double noise = 0.1;
  double anomaly_fraction = 0.0;
  std::size_t pixels = 448;
  bool normalize = false;
};

Matrix layout_means(const SynthOptions& o) {
  // components normal means plus one held-out anomaly mean, pairwise apart.
  std::mt19937_64 rng(o.layout_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(o.components + 1, o.dim);
  for (std::size_t m = 0; m <= o.components; ++m) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      double sq = 0.0;
      for (std::size_t d = 0; d < o.dim; ++d) {
        means(m, d) = normal(rng);
        sq += means(m, d) * means(m, d);
      }
      const double scale = o.spread / std::sqrt(std::max(sq, 1e-300));
      for (std::size_t d = 0; d < o.dim; ++d) means(m, d) *= scale;
      bool apart = true;
      for (std::size_t j = 0; j < m && apart; ++j) {
        double dist = 0.0;
        for (std::size_t d = 0; d < o.dim; ++d) {
          const double diff = means(m, d) - means(j, d);
          dist += diff * diff;
        }
        apart = std::sqrt(dist) >= o.spread;
      }
      if (apart) break;
    }
  }
  return means;
}

int cmd_synth(const SynthOptions& o) {
  if (o.components < 1 || o.dim < 1 || o.count < 1 || o.grid < 1) {
    throw UsageError("--components, --dim, --count and --grid must be positive");
  }
  if (!(o.noise > 0.0) || !(o.spread > 0.0)) throw UsageError("--noise and --spread must be positive");
  if (o.anomaly_fraction < 0.0 || o.anomaly_fraction > 1.0) {
    throw UsageError("--anomaly-fraction must lie in [0, 1]");
  }
  if (o.pixels < o.grid) throw UsageError("--pixels must be at least --grid");

  const Matrix means = layout_means(o);
  const std::size_t anomaly = o.components;
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> pick(0, o.components - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const fs::path out(o.out);
  const fs::path out_dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  const std::string mask_dir_name = out.stem().string() + "_masks";
  const std::size_t per = std::size_t{o.grid} * o.grid;

  fs::create_directories(out_dir);
  io::Shard shard;
  shard.D = static_cast<std::uint32_t>(o.dim);
  shard.normalized = o.normalize;
  std::vector<std::size_t> labels;
  labels.reserve(o.count);

  std::size_t produced = 0;
  for (std::size_t r = 0; produced < o.count; ++r) {
    io::ShardRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "img%06zu", r);
    rec.image_id = id;
    const std::size_t rows = std::min(per, o.count - produced);
    if (rows == per) {
      rec.grid_h = rec.grid_w = o.grid;
    } else {
      rec.grid_h = 1;
      rec.grid_w = static_cast<std::uint32_t>(rows);
    }
    // Anomalous block of patches, only in full records.
    std::vector<std::uint8_t> patch_anomalous(rows, 0);
    const bool anomalous = rows == per && o.anomaly_fraction > 0.0 && unit(rng) < o.anomaly_fraction;
    if (anomalous) {
      const std::uint32_t lo = std::max(1u, o.grid / 4);
      const std::uint32_t hi = std::max(lo, o.grid / 2);
      std::uniform_int_distribution<std::uint32_t> side(lo, hi);
      const std::uint32_t h = side(rng), w = side(rng);
      const std::uint32_t top = std::uniform_int_distribution<std::uint32_t>(0, o.grid - h)(rng);
      const std::uint32_t left = std::uniform_int_distribution<std::uint32_t>(0, o.grid - w)(rng);
      for (std::uint32_t i = top; i < top + h; ++i) {
        for (std::uint32_t j = left; j < left + w; ++j) patch_anomalous[i * o.grid + j] = 1;
      }
    }
    rec.data.resize(rows * o.dim);
    std::vector<double> row(o.dim);
    for (std::size_t p = 0; p < rows; ++p) {
      const std::size_t label = patch_anomalous[p] ? anomaly : pick(rng);
      labels.push_back(label);
      double sq = 0.0;
      for (std::size_t d = 0; d < o.dim; ++d) {
        row[d] = means(label, d) + o.noise * normal(rng);
        sq += row[d] * row[d];
      }
      const double scale = (o.normalize && sq > 1e-24) ? 1.0 / std::sqrt(sq) : 1.0;
      for (std::size_t d = 0; d < o.dim; ++d) {
        rec.data[p * o.dim + d] = static_cast<float>(row[d] * scale);
      }
    }
    if (anomalous) {
      BinaryMask mask{o.pixels, o.pixels, std::vector<std::uint8_t>(o.pixels * o.pixels, 0)};
      for (std::size_t y = 0; y < o.pixels; ++y) {
        const std::size_t i = y * o.grid / o.pixels;
        for (std::size_t x = 0; x < o.pixels; ++x) {
          const std::size_t j = x * o.grid / o.pixels;
          mask.bits[y * o.pixels + x] = patch_anomalous[i * o.grid + j];
        }
      }
      fs::create_directories(out_dir / mask_dir_name);
      const std::string rel = mask_dir_name + "/" + io::file_stem_for(rec.image_id) + ".pgm";
      io::write_mask_pgm(out_dir / rel, mask);
      rec.mask_path = rel;
    }
    produced += rows;
    shard.records.push_back(std::move(rec));
  }

  io::write_shard(out, shard);
  std::ofstream lab(o.out + ".labels");
  if (!lab) fail(Errc::io, "cannot write " + o.out + ".labels");
  for (std::size_t l : labels) lab << l << '\n';
  std::cout << "wrote " << shard.records.size() << " records, " << o.count << " vectors to "
            << o.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------- fit

struct FitOptions {
  std::string train;
  std::string val;
  std::string out;
  std::string resume;
  std::string report;
  FitConfig config;
  bool normalize = true;
  bool k_given = false;
};

std::vector<EmbeddingBatch> load_batches(const std::string& where, bool normalize) {
  std::vector<EmbeddingBatch> out;
  for (const auto& lr : load_records(where)) out.push_back(prepared_batch(lr, normalize));
  return out;
}

int cmd_fit(const FitOptions& o) {
  FitConfig config = o.config;
  std::optional<io::Checkpoint> resume;
  if (!o.resume.empty()) {
    resume = io::read_checkpoint(o.resume);
    if (!resume->stats) {
      fail(Errc::invalid_argument, "checkpoint " + o.resume +
                                       " has no sufficient statistics and cannot be resumed");
    }
    if (!o.k_given) config.K = resume->model.K;
  }
  try {
    config.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto train = load_batches(o.train, o.normalize);
  const auto val = o.val.empty() ? std::vector<EmbeddingBatch>{} : load_batches(o.val, o.normalize);

  FitResult result;
  if (resume) {
    result = resume_fit(train, val, config, std::move(resume->model), std::move(*resume->stats));
  } else {
    result = fit(train, val, config);
  }
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  io::write_checkpoint(o.out, io::Checkpoint{result.model, result.stats});

  std::ostringstream rep;
  rep << "epoch\tval_log_likelihood\teffective_components\tseconds\n";
  const auto& r = result.report;
  for (std::size_t e = 0; e < r.val_log_likelihood.size(); ++e) {
    rep << e << '\t' << fmt_double(r.val_log_likelihood[e]) << '\t' << r.effective_count[e] << '\t'
        << fmt_double(r.epoch_seconds[e]) << '\n';
  }
  rep << "best_epoch\t" << (r.best_epoch ? std::to_string(*r.best_epoch) : std::string("none"))
      << '\n';
  rep << "final_effective_components\t" << r.final_effective_components << '\n';
  rep << "alpha\t" << fmt_double(result.model.alpha) << '\n';
  std::cout << rep.str();
  if (!o.report.empty()) {
    std::ofstream f(o.report);
    if (!f) fail(Errc::io, "cannot write " + o.report);
    f << rep.str();
  }
  return kOk;
}

// ---------------------------------------------------------------- score

struct ScoreOptions {
  std::string model;
  std::string in;
  std::string out;
  std::string method = "cosine";
  ScoreSettings settings;
  bool render = false;
  unsigned threads = default_threads();
};

int cmd_score(const ScoreOptions& o) {
  ScoreSettings s = o.settings;
  s.method = method_from(o.method);
  if (s.height < 1 || s.width < 1) throw UsageError("--height and --width must be positive");
  const auto model = io::read_checkpoint(o.model).model;
  const auto records = load_records(o.in);
  fs::create_directories(o.out);

  std::vector<double> millis(records.size());
  parallel_for(records.size(), o.threads, [&](std::size_t i) {
    const auto start = std::chrono::steady_clock::now();
    const auto map = score_record(records[i], model, s);
    millis[i] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const std::string stem = io::file_stem_for(records[i].record.image_id);
    io::write_map(fs::path(o.out) / (stem + ".amap"), map);
    if (o.render) io::render_map_pgm(map, fs::path(o.out) / (stem + ".pgm"));
  });

  std::ofstream timing(fs::path(o.out) / "timing.tsv");
  if (!timing) fail(Errc::io, "cannot write timing file in " + o.out);
  for (std::size_t i = 0; i < records.size(); ++i) {
    timing << records[i].record.image_id << '\t' << fmt_double(millis[i]) << '\n';
  }
  std::cout << "scored " << records.size() << " records into " << o.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------- threshold

struct ThresholdOptions {
  std::string model;
  std::string val;
  double fpr = 0.05;
  std::string method = "cosine";
  ScoreSettings settings;
  unsigned threads = default_threads();
};

int cmd_threshold(const ThresholdOptions& o) {
  check_fpr(o.fpr);
  ScoreSettings s = o.settings;
  s.method = method_from(o.method);
  const auto model = io::read_checkpoint(o.model).model;
  const auto records = load_records(o.val);
  if (records.empty()) fail(Errc::invalid_argument, "no validation records in " + o.val);
  const auto pooled = pooled_pixel_scores(records, model, s, o.threads);
  std::cout << std::setprecision(17) << select_threshold(pooled, o.fpr) << '\n';
  return kOk;
}

// ---------------------------------------------------------------- assign-map

struct AssignOptions {
  std::string model;
  std::string in;
  std::string out;
  std::string method = "cosine";
  double t_pi = kDefaultWeightThreshold;
  std::size_t scale = 1;
};

int cmd_assign(const AssignOptions& o) {
  const ScoreMethod method = method_from(o.method);
  if (o.scale < 1) throw UsageError("--scale must be positive");
  const auto model = io::read_checkpoint(o.model).model;
  const auto effective = effective_components(model, o.t_pi);
  std::map<std::size_t, std::size_t> rank;
  for (std::size_t i = 0; i < effective.size(); ++i) rank[effective[i]] = i;
  const double step = effective.size() > 1 ? 255.0 / static_cast<double>(effective.size() - 1) : 0.0;

  const auto records = load_records(o.in);
  fs::create_directories(o.out);
  for (const auto& lr : records) {
    const auto batch = prepared_batch(lr, model.normalized_input);
    const auto idx = component_assignment(batch, model, method, o.t_pi);
    const std::size_t gh = lr.record.grid_h, gw = lr.record.grid_w;
    const std::size_t H = gh * o.scale, W = gw * o.scale;
    std::vector<std::uint8_t> px(H * W);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t k = idx[(y / o.scale) * gw + x / o.scale];
        px[y * W + x] = static_cast<std::uint8_t>(std::lround(step * static_cast<double>(rank[k])));
      }
    }
    io::write_gray_pgm(fs::path(o.out) / (io::file_stem_for(lr.record.image_id) + ".pgm"), H, W,
                       px);
  }
  std::cout << "wrote " << records.size() << " assignment maps over " << effective.size()
            << " components into " << o.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string scores;
  std::string shards;
  std::optional<double> threshold;
  std::string fpr_list;
  std::string val;
  std::string model;
  std::string method = "cosine";
  double t_pi = kDefaultWeightThreshold;
  std::string permute_against;
  std::size_t n_perm = 10000;
  std::uint64_t seed = 0;
  bool per_image_dice = false;
  std::string report;
  unsigned threads = default_threads();
};

std::vector<double> parse_fpr_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw UsageError("invalid --fpr-list entry '" + item + "'");
    }
    if (used != item.size()) throw UsageError("invalid --fpr-list entry '" + item + "'");
    check_fpr(v);
    out.push_back(v);
  }
  return out;
}

struct ImageEval {
  std::string id;
  AnomalyMap map;
  BinaryMask mask;
};

AnomalyMap load_map_for(const fs::path& dir, const std::string& id) {
  return io::read_map(dir / (io::file_stem_for(id) + ".amap"));
}

BinaryMask mask_for(const LoadedRecord& lr, std::size_t H, std::size_t W) {
  if (!lr.record.mask_path) return BinaryMask{H, W, std::vector<std::uint8_t>(H * W, 0)};
  fs::path p(*lr.record.mask_path);
  if (p.is_relative()) p = lr.shard_dir / p;
  auto mask = io::read_mask_pgm(p);
  if (mask.H != H || mask.W != W) {
    fail(Errc::dimension_mismatch, "mask " + p.string() + " is " + std::to_string(mask.H) + "x" +
                                       std::to_string(mask.W) + " but the map is " +
                                       std::to_string(H) + "x" + std::to_string(W));
  }
  return mask;
}

LabeledScores pooled(const std::vector<ImageEval>& images) {
  LabeledScores out;
  for (const auto& im : images) {
    out.scores.insert(out.scores.end(), im.map.values.values().begin(), im.map.values.values().end());
    out.labels.insert(out.labels.end(), im.mask.bits.begin(), im.mask.bits.end());
  }
  return out;
}

double dice_at(const std::vector<ImageEval>& images, double t, bool per_image) {
  std::vector<BinaryMask> preds, gts;
  for (const auto& im : images) {
    preds.push_back(binarize(im.map, t));
    gts.push_back(im.mask);
  }
  return per_image ? mean_dice(preds, gts) : pooled_dice(preds, gts);
}

std::optional<double> mean_timing(const fs::path& dir) {
  std::ifstream in(dir / "timing.tsv");
  if (!in) return std::nullopt;
  std::string line;
  double total = 0.0;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) continue;
    total += std::stod(line.substr(tab + 1));
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

int cmd_eval(const EvalOptions& o) {
  const auto fprs = parse_fpr_list(o.fpr_list);
  if (!fprs.empty() && (o.val.empty() || o.model.empty())) {
    throw UsageError("--fpr-list requires --val and --model");
  }
  const ScoreMethod method = method_from(o.method);

  const auto records = load_records(o.shards);
  if (records.empty()) fail(Errc::invalid_argument, "no records in " + o.shards);
  std::vector<ImageEval> images(records.size());
  parallel_for(records.size(), o.threads, [&](std::size_t i) {
    auto map = load_map_for(o.scores, records[i].record.image_id);
    auto mask = mask_for(records[i], map.values.rows(), map.values.cols());
    images[i] = {records[i].record.image_id, std::move(map), std::move(mask)};
  });

  std::ostringstream rep;
  const auto all = pooled(images);
  rep << "pixel_auroc\t" << fmt_double(auroc(all)) << '\n';
  rep << "pixel_aupr\t" << fmt_double(aupr(all)) << '\n';
  const char* dice_kind = o.per_image_dice ? "mean" : "pooled";
  if (o.threshold) {
    rep << "dice@threshold=" << fmt_double(*o.threshold) << '\t'
        << fmt_double(dice_at(images, *o.threshold, o.per_image_dice)) << '\t' << dice_kind << '\n';
  }
  if (!fprs.empty()) {
    const auto model = io::read_checkpoint(o.model).model;
    const auto val = load_records(o.val);
    if (val.empty()) fail(Errc::invalid_argument, "no validation records in " + o.val);
    ScoreSettings s{method, o.t_pi, images.front().map.values.rows(),
                    images.front().map.values.cols()};
    const auto normal = pooled_pixel_scores(val, model, s, o.threads);
    for (double fpr : fprs) {
      const double t = select_threshold(normal, fpr);
      rep << "threshold@fpr=" << fmt_double(fpr) << '\t' << fmt_double(t) << '\n';
      rep << "dice@fpr=" << fmt_double(fpr) << '\t' << fmt_double(dice_at(images, t, o.per_image_dice))
          << '\t' << dice_kind << '\n';
    }
  }
  if (const auto ms = mean_timing(o.scores)) {
    rep << "scoring_ms_per_sample\t" << fmt_double(*ms) << '\n';
  }

  if (!o.permute_against.empty()) {
    PairedImageScores roc{{}, {}, o.n_perm, o.seed};
    PairedImageScores pr{{}, {}, o.n_perm, o.seed};
    for (const auto& im : images) {
      const auto pos = std::count(im.mask.bits.begin(), im.mask.bits.end(), std::uint8_t{1});
      if (pos == 0) continue;
      const auto other = load_map_for(o.permute_against, im.id);
      if (other.values.rows() != im.map.values.rows() || other.values.cols() != im.map.values.cols()) {
        fail(Errc::dimension_mismatch, "comparison map for '" + im.id + "' has a different size");
      }
      const LabeledScores mine{im.map.values.values(), im.mask.bits};
      const LabeledScores theirs{other.values.values(), im.mask.bits};
      pr.a.push_back(aupr(mine));
      pr.b.push_back(aupr(theirs));
      if (static_cast<std::size_t>(pos) < im.mask.bits.size()) {
        roc.a.push_back(auroc(mine));
        roc.b.push_back(auroc(theirs));
      }
    }
    rep << "perm_images\t" << pr.a.size() << '\n';
    if (roc.a.size() >= 2) rep << "perm_p_auroc\t" << fmt_double(paired_permutation_test(roc)) << '\n';
    if (pr.a.size() >= 2) rep << "perm_p_aupr\t" << fmt_double(paired_permutation_test(pr)) << '\n';
  }

  std::cout << rep.str();
  if (!o.report.empty()) {
    std::ofstream f(o.report);
    if (!f) fail(Errc::io, "cannot write " + o.report);
    f << rep.str();
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Dirichlet process mixture prototypes for patch-embedding anomaly detection", "dpmm"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Write a shard of synthetic Gaussian-mixture embeddings");
  s->add_option("--out", synth.out, "Output shard path")->required();
  s->add_option("--components", synth.components, "Number of normal components");
  s->add_option("--dim", synth.dim, "Embedding dimension");
  s->add_option("--count", synth.count, "Number of embedding vectors");
  s->add_option("--seed", synth.seed, "Sampling seed");
  s->add_option("--layout-seed", synth.layout_seed, "Seed for the component means (shared across shards)");
  s->add_option("--grid", synth.grid, "Patch grid side per record");
  s->add_option("--spread", synth.spread, "Norm of, and minimum spacing between, component means");
  s->add_option("--noise", synth.noise, "Per-dimension standard deviation");
  s->add_option("--anomaly-fraction", synth.anomaly_fraction,
                "Fraction of records holding a block drawn from the held-out component");
  s->add_option("--pixels", synth.pixels, "Mask resolution (pixels per side)");
  s->add_option("--normalize", synth.normalize, "Write L2-normalized rows");

  FitOptions fo;
  auto* f = app.add_subcommand("fit", "Fit the mixture with batched EM");
  f->add_option("--train", fo.train, "Training shard file or directory")->required();
  f->add_option("--val", fo.val, "Validation shard file or directory (model selection)");
  f->add_option("--out", fo.out, "Output checkpoint path")->required();
  auto* k_opt = f->add_option("--k", fo.config.K, "Truncation level")->check(CLI::PositiveNumber);
  f->add_option("--gamma", fo.config.gamma, "Moving-average discount")->check(CLI::Range(0.0, 1.0));
  f->add_option("--epochs", fo.config.epochs, "Training epochs");
  f->add_option("--batch-vectors", fo.config.batch_vectors, "Embeddings per batch")
      ->check(CLI::PositiveNumber);
  f->add_option("--seed", fo.config.seed, "Seed for initialization and batch order");
  f->add_option("--alpha-init", fo.config.alpha_init, "Initial concentration")
      ->check(CLI::PositiveNumber);
  f->add_option("--var-floor", fo.config.var_floor, "Lower bound on variances")
      ->check(CLI::PositiveNumber);
  f->add_option("--normalize", fo.normalize, "L2-normalize embeddings before fitting");
  f->add_flag("--full-batch", fo.config.full_batch_mode,
              "One batch per epoch, gamma = 1, concentration held fixed");
  f->add_option("--resume", fo.resume, "Continue from a checkpoint that carries statistics");
  f->add_option("--report", fo.report, "Also write the fit report to this file");

  ScoreOptions so;
  auto* sc = app.add_subcommand("score", "Write pixel anomaly maps for every record");
  sc->add_option("--model", so.model, "Checkpoint path")->required();
  sc->add_option("--in", so.in, "Shard file or directory")->required();
  sc->add_option("--out", so.out, "Output directory")->required();
  sc->add_option("--method", so.method, "cosine | euclidean | likelihood")
      ->check(CLI::IsMember({"cosine", "euclidean", "likelihood"}));
  sc->add_option("--t-pi", so.settings.t_pi, "Component weight threshold")
      ->check(CLI::NonNegativeNumber);
  sc->add_option("--height", so.settings.height, "Output map height")->check(CLI::PositiveNumber);
  sc->add_option("--width", so.settings.width, "Output map width")->check(CLI::PositiveNumber);
  sc->add_flag("--render", so.render, "Also write min-max scaled PGM renderings");
  sc->add_option("--threads", so.threads, "Worker threads")->check(CLI::PositiveNumber);

  ThresholdOptions to;
  auto* th = app.add_subcommand("threshold", "Print the threshold reaching a target FPR on normal data");
  th->add_option("--model", to.model, "Checkpoint path")->required();
  th->add_option("--val", to.val, "Normal validation shard file or directory")->required();
  th->add_option("--fpr", to.fpr, "Target false positive rate");
  th->add_option("--method", to.method, "cosine | euclidean | likelihood")
      ->check(CLI::IsMember({"cosine", "euclidean", "likelihood"}));
  th->add_option("--t-pi", to.settings.t_pi, "Component weight threshold")
      ->check(CLI::NonNegativeNumber);
  th->add_option("--height", to.settings.height, "Map height")->check(CLI::PositiveNumber);
  th->add_option("--width", to.settings.width, "Map width")->check(CLI::PositiveNumber);
  th->add_option("--threads", to.threads, "Worker threads")->check(CLI::PositiveNumber);

  AssignOptions ao;
  auto* am = app.add_subcommand("assign-map", "Render the closest-component index per patch");
  am->add_option("--model", ao.model, "Checkpoint path")->required();
  am->add_option("--in", ao.in, "Shard file or directory")->required();
  am->add_option("--out", ao.out, "Output directory")->required();
  am->add_option("--method", ao.method, "cosine | euclidean | likelihood")
      ->check(CLI::IsMember({"cosine", "euclidean", "likelihood"}));
  am->add_option("--t-pi", ao.t_pi, "Component weight threshold")->check(CLI::NonNegativeNumber);
  am->add_option("--scale", ao.scale, "Pixels per patch side in the rendering")
      ->check(CLI::PositiveNumber);

  EvalOptions eo;
  auto* ev = app.add_subcommand("eval", "Pixel AUROC/AUPR, Dice and permutation tests");
  ev->add_option("--scores", eo.scores, "Directory of anomaly maps")->required();
  ev->add_option("--masks-from-shards", eo.shards, "Shards whose records reference masks")
      ->required();
  ev->add_option("--threshold", eo.threshold, "Fixed threshold for Dice");
  ev->add_option("--fpr-list", eo.fpr_list, "Comma-separated FPR targets, e.g. 0.01,0.05,0.10");
  ev->add_option("--val", eo.val, "Normal validation shards for FPR calibration");
  ev->add_option("--model", eo.model, "Checkpoint for FPR calibration");
  ev->add_option("--method", eo.method, "Score method used for FPR calibration")
      ->check(CLI::IsMember({"cosine", "euclidean", "likelihood"}));
  ev->add_option("--t-pi", eo.t_pi, "Component weight threshold for FPR calibration")
      ->check(CLI::NonNegativeNumber);
  ev->add_option("--permute-against", eo.permute_against, "Directory of competing anomaly maps");
  ev->add_option("--n-perm", eo.n_perm, "Permutations for the paired test")
      ->check(CLI::PositiveNumber);
  ev->add_option("--seed", eo.seed, "Permutation seed");
  ev->add_flag("--per-image-dice", eo.per_image_dice, "Average Dice per image instead of pooling");
  ev->add_option("--report", eo.report, "Also write the report to this file");
  ev->add_option("--threads", eo.threads, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (f->parsed()) {
      fo.k_given = k_opt->count() > 0;
      return cmd_fit(fo);
    }
    if (sc->parsed()) return cmd_score(so);
    if (th->parsed()) return cmd_threshold(to);
    if (am->parsed()) return cmd_assign(ao);
    if (ev->parsed()) return cmd_eval(eo);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"dpmm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace dpmm::cli
