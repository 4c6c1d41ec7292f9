// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#include "dpmm/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "dpmm/error.hpp"

namespace dpmm::io {
namespace fs = std::filesystem;

namespace {

constexpr char kShardMagic[4] = {'A', 'D', 'N', 'E'};
constexpr char kModelMagic[4] = {'D', 'P', 'M', 'M'};
constexpr char kMapMagic[4] = {'A', 'M', 'A', 'P'};

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  [[nodiscard]] const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> data, std::string what)
      : data_(std::move(data)), what_(std::move(what)) {}

  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) fail(Errc::truncated, what_ + ": truncated file");
  }
  void magic(const char (&expected)[4]) {
    need(4);
    if (std::memcmp(data_.data() + pos_, expected, 4) != 0) {
      fail(Errc::bad_magic, what_ + ": bad magic");
    }
    pos_ += 4;
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::uint32_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void version() {
    const std::uint32_t v = u32();
    if (v != kFormatVersion) {
      fail(Errc::unsupported_version, what_ + ": unsupported version " + std::to_string(v));
    }
  }
  void finish() const {
    if (pos_ != data_.size()) fail(Errc::malformed, what_ + ": trailing bytes after payload");
  }
  [[nodiscard]] const std::string& what() const noexcept { return what_; }

 private:
  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, const std::string& what) {
  std::uint64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) fail(Errc::malformed, what + ": dimension overflow");
  return out;
}

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (in.bad()) fail(Errc::io, "read error on " + path.string());
  return data;
}

void write_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::io, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(Errc::io, "write error on " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(Errc::io, "cannot move output into place at " + path.string());
  }
}

}  // namespace

EmbeddingBatch to_batch(const ShardRecord& record, std::uint32_t D, bool normalized) {
  const std::size_t rows = std::size_t{record.grid_h} * record.grid_w;
  require(record.data.size() == rows * D, Errc::dimension_mismatch,
          "record payload does not match grid and dimension");
  EmbeddingBatch batch(Matrix(rows, D), normalized);
  std::copy(record.data.begin(), record.data.end(), batch.data.data());
  return batch;
}

void write_shard(const fs::path& path, const Shard& shard) {
  ByteWriter w;
  w.bytes(kShardMagic, 4);
  w.u32(kFormatVersion);
  w.u32(shard.D);
  w.u32(shard.normalized ? 1u : 0u);
  w.u64(shard.records.size());
  for (const auto& rec : shard.records) {
    require(rec.grid_h >= 1 && rec.grid_w >= 1, Errc::invalid_argument,
            "record grid must be at least 1x1");
    if (rec.data.size() != std::size_t{rec.grid_h} * rec.grid_w * shard.D) {
      fail(Errc::dimension_mismatch,
           "record '" + rec.image_id + "' does not match the shard dimensionality");
    }
    w.u32(static_cast<std::uint32_t>(rec.image_id.size()));
    w.bytes(rec.image_id.data(), rec.image_id.size());
    w.u32(rec.grid_h);
    w.u32(rec.grid_w);
    w.u8(rec.mask_path ? 1 : 0);
    if (rec.mask_path) {
      w.u32(static_cast<std::uint32_t>(rec.mask_path->size()));
      w.bytes(rec.mask_path->data(), rec.mask_path->size());
    }
    for (float v : rec.data) w.f32(v);
  }
  write_atomic(path, w.buffer());
}

Shard read_shard(const fs::path& path) {
  ByteReader r(slurp(path), path.string());
  r.magic(kShardMagic);
  r.version();
  Shard shard;
  shard.D = r.u32();
  const std::uint32_t flags = r.u32();
  if (flags & ~1u) fail(Errc::malformed, r.what() + ": unknown flag bits");
  shard.normalized = (flags & 1u) != 0;
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    ShardRecord rec;
    rec.image_id = r.str(r.u32());
    rec.grid_h = r.u32();
    rec.grid_w = r.u32();
    if (rec.grid_h == 0 || rec.grid_w == 0) fail(Errc::malformed, r.what() + ": empty patch grid");
    const std::uint8_t has_mask = r.u8();
    if (has_mask > 1) fail(Errc::malformed, r.what() + ": invalid mask flag");
    if (has_mask) rec.mask_path = r.str(r.u32());
    const std::uint64_t n =
        checked_mul(checked_mul(rec.grid_h, rec.grid_w, r.what()), shard.D, r.what());
    r.need(checked_mul(n, 4, r.what()));
    rec.data.resize(n);
    for (auto& v : rec.data) v = r.f32();
    shard.records.push_back(std::move(rec));
  }
  r.finish();
  return shard;
}

void write_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  const auto& m = checkpoint.model;
  require(m.means.rows() == m.K && m.means.cols() == m.D && m.vars.rows() == m.K &&
              m.vars.cols() == m.D && m.sticks.size() == m.K,
          Errc::dimension_mismatch, "model shapes are inconsistent");
  ByteWriter w;
  w.bytes(kModelMagic, 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.K));
  w.u32(static_cast<std::uint32_t>(m.D));
  w.u8(m.normalized_input ? 1 : 0);
  w.f64(m.alpha);
  for (double v : m.sticks) w.f64(v);
  for (double v : m.means.values()) w.f64(v);
  for (double v : m.vars.values()) w.f64(v);
  w.u8(checkpoint.stats ? 1 : 0);
  if (checkpoint.stats) {
    const auto& s = *checkpoint.stats;
    require(s.p_bar.size() == m.K && s.m_bar.rows() == m.K && s.m_bar.cols() == m.D &&
                s.c_bar.rows() == m.K && s.c_bar.cols() == m.D,
            Errc::dimension_mismatch, "statistics shapes do not match the model");
    for (double v : s.p_bar) w.f64(v);
    for (double v : s.m_bar.values()) w.f64(v);
    for (double v : s.c_bar.values()) w.f64(v);
    w.u32(static_cast<std::uint32_t>(s.batch_size));
  }
  write_atomic(path, w.buffer());
}

Checkpoint read_checkpoint(const fs::path& path) {
  ByteReader r(slurp(path), path.string());
  r.magic(kModelMagic);
  r.version();
  Checkpoint cp;
  auto& m = cp.model;
  m.K = r.u32();
  m.D = r.u32();
  if (m.K == 0 || m.D == 0) fail(Errc::malformed, r.what() + ": K and D must be positive");
  const std::uint8_t normalized = r.u8();
  if (normalized > 1) fail(Errc::malformed, r.what() + ": invalid normalization flag");
  m.normalized_input = normalized != 0;
  m.alpha = r.f64();
  const std::uint64_t kd = checked_mul(m.K, m.D, r.what());
  r.need(checked_mul(checked_mul(kd, 2, r.what()) + m.K, 8, r.what()));
  m.sticks.resize(m.K);
  for (auto& v : m.sticks) v = r.f64();
  m.means = Matrix(m.K, m.D);
  for (auto& v : m.means.values()) v = r.f64();
  m.vars = Matrix(m.K, m.D);
  for (auto& v : m.vars.values()) v = r.f64();
  const std::uint8_t has_stats = r.u8();
  if (has_stats > 1) fail(Errc::malformed, r.what() + ": invalid statistics flag");
  if (has_stats) {
    r.need(checked_mul(checked_mul(kd, 2, r.what()) + m.K, 8, r.what()));
    SufficientStats s;
    s.p_bar.resize(m.K);
    for (auto& v : s.p_bar) v = r.f64();
    s.m_bar = Matrix(m.K, m.D);
    for (auto& v : s.m_bar.values()) v = r.f64();
    s.c_bar = Matrix(m.K, m.D);
    for (auto& v : s.c_bar.values()) v = r.f64();
    s.batch_size = r.u32();
    cp.stats = std::move(s);
  }
  r.finish();
  try {
    m.validate(std::numeric_limits<double>::min());
  } catch (const Error& e) {
    fail(Errc::malformed, r.what() + ": invalid model: " + e.what());
  }
  return cp;
}

void write_map(const fs::path& path, const AnomalyMap& map) {
  ByteWriter w;
  w.bytes(kMapMagic, 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(map.values.rows()));
  w.u32(static_cast<std::uint32_t>(map.values.cols()));
  for (double v : map.values.values()) w.f32(static_cast<float>(v));
  write_atomic(path, w.buffer());
}

AnomalyMap read_map(const fs::path& path) {
  ByteReader r(slurp(path), path.string());
  r.magic(kMapMagic);
  r.version();
  const std::uint32_t H = r.u32();
  const std::uint32_t W = r.u32();
  r.need(checked_mul(checked_mul(H, W, r.what()), 4, r.what()));
  AnomalyMap map{Matrix(H, W), path.stem().string()};
  for (auto& v : map.values.values()) v = r.f32();
  r.finish();
  return map;
}

namespace {

void write_pgm(const fs::path& path, std::size_t H, std::size_t W,
               const std::vector<std::uint8_t>& pixels) {
  require(pixels.size() == H * W, Errc::dimension_mismatch, "pixel count does not match size");
  std::ostringstream header;
  header << "P5\n" << W << ' ' << H << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  write_atomic(path, bytes);
}

}  // namespace

void write_gray_pgm(const fs::path& path, std::size_t H, std::size_t W,
                    const std::vector<std::uint8_t>& pixels) {
  write_pgm(path, H, W, pixels);
}

void write_mask_pgm(const fs::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.bits.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.bits[i] ? 255 : 0;
  write_pgm(path, mask.H, mask.W, px);
}

BinaryMask read_mask_pgm(const fs::path& path) {
  const auto data = slurp(path);
  const std::string what = path.string();
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(data[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::uint64_t {
    skip_space();
    if (pos >= data.size()) fail(Errc::truncated, what + ": truncated PGM header");
    if (!std::isdigit(data[pos])) fail(Errc::malformed, what + ": malformed PGM header");
    std::uint64_t v = 0;
    while (pos < data.size() && std::isdigit(data[pos])) {
      v = v * 10 + (data[pos++] - '0');
      if (v > (std::uint64_t{1} << 32)) fail(Errc::malformed, what + ": dimension overflow");
    }
    return v;
  };
  if (data.size() < 2) fail(Errc::truncated, what + ": truncated PGM header");
  if (data[0] != 'P' || data[1] != '5') fail(Errc::bad_magic, what + ": not a binary PGM");
  pos = 2;
  const std::uint64_t W = number();
  const std::uint64_t H = number();
  const std::uint64_t maxval = number();
  if (W == 0 || H == 0) fail(Errc::malformed, what + ": empty PGM");
  if (maxval == 0 || maxval > 255) fail(Errc::malformed, what + ": only 8-bit PGM is supported");
  if (pos >= data.size() || !std::isspace(data[pos])) {
    fail(pos >= data.size() ? Errc::truncated : Errc::malformed, what + ": malformed PGM header");
  }
  ++pos;
  const std::uint64_t n = checked_mul(W, H, what);
  if (n > data.size() - pos) fail(Errc::truncated, what + ": truncated PGM data");
  if (n < data.size() - pos) fail(Errc::malformed, what + ": trailing bytes after PGM data");
  BinaryMask mask{static_cast<std::size_t>(H), static_cast<std::size_t>(W), {}};
  mask.bits.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    mask.bits[i] = (static_cast<unsigned>(data[pos + i]) * 255u / maxval) > 127u ? 1 : 0;
  }
  return mask;
}

void render_map_pgm(const AnomalyMap& map, const fs::path& path) {
  const auto& v = map.values.values();
  std::vector<std::uint8_t> px(v.size(), 0);
  if (!v.empty()) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double range = *hi - *lo;
    if (range > 0.0 && std::isfinite(range)) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        px[i] = static_cast<std::uint8_t>(std::lround(255.0 * (v[i] - *lo) / range));
      }
    }
  }
  write_pgm(path, map.values.rows(), map.values.cols(), px);
}

std::vector<fs::path> list_shards(const fs::path& dir_or_file) {
  std::error_code ec;
  if (fs::is_regular_file(dir_or_file, ec)) return {dir_or_file};
  if (!fs::is_directory(dir_or_file, ec)) {
    fail(Errc::io, "no such file or directory: " + dir_or_file.string());
  }
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir_or_file)) {
    if (entry.is_regular_file() && entry.path().extension() == ".adne") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string file_stem_for(const std::string& image_id) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : image_id) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 15]);
    }
  }
  if (out.empty() || out == "." || out == "..") out = "%" + out;
  return out;
}

}  // namespace dpmm::io
