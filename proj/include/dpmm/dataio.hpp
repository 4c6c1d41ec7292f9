// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk formats. All integers and floats are little-endian.
//
//   Embedding shard (.adne)
//     "ADNE" u32 version=1 u32 D u32 flags(bit0: rows L2-normalized) u64 count
//     per record: u32 id_len, id bytes, u32 grid_h, u32 grid_w, u8 has_mask,
//                 [u32 mask_len, mask bytes], grid_h*grid_w*D f32
//
//   Checkpoint (.dpmm)
//     "DPMM" u32 version=1 u32 K u32 D u8 normalized_input f64 alpha
//     K f64 sticks, K*D f64 means, K*D f64 vars, u8 has_stats,
//     [K f64 p_bar, K*D f64 m_bar, K*D f64 c_bar, u32 batch_size]
//
//   Anomaly map (.amap)
//     "AMAP" u32 version=1 u32 H u32 W, H*W f32 row-major
//
//   Masks and renderings are binary PGM (P5, maxval 255).
//
// Writers go through a temporary file and rename, so readers never see a
// partial file. Readers report malformed input as dpmm::Error with one of
// bad_magic, unsupported_version, truncated, malformed, dimension_mismatch.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dpmm/core.hpp"
#include "dpmm/score.hpp"

namespace dpmm::io {

inline constexpr std::uint32_t kFormatVersion = 1;

struct ShardRecord {
  std::string image_id;
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::optional<std::string> mask_path;
  std::vector<float> data;  // (grid_h * grid_w) x D, patch (i, j) at row i * grid_w + j

  bool operator==(const ShardRecord&) const = default;
};

struct Shard {
  std::uint32_t D = 0;
  bool normalized = false;
  std::vector<ShardRecord> records;

  bool operator==(const Shard&) const = default;
};

/// Widens one record to an EmbeddingBatch (one row per patch).
EmbeddingBatch to_batch(const ShardRecord& record, std::uint32_t D, bool normalized);

void write_shard(const std::filesystem::path& path, const Shard& shard);
Shard read_shard(const std::filesystem::path& path);

struct Checkpoint {
  DpmmModel model;
  std::optional<SufficientStats> stats;

  bool operator==(const Checkpoint&) const = default;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void write_map(const std::filesystem::path& path, const AnomalyMap& map);
AnomalyMap read_map(const std::filesystem::path& path);

void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_mask_pgm(const std::filesystem::path& path);

/// 8-bit grayscale PGM of a raw byte image.
void write_gray_pgm(const std::filesystem::path& path, std::size_t H, std::size_t W,
                    const std::vector<std::uint8_t>& pixels);

/// Min-max scales the map to 0..255; a constant map renders as all zeros.
void render_map_pgm(const AnomalyMap& map, const std::filesystem::path& path);

/// Shard files (*.adne) under a directory in lexicographic order, or the path
/// itself when it names a file.
std::vector<std::filesystem::path> list_shards(const std::filesystem::path& dir_or_file);

/// Safe file name for an image id ('/' and other separators replaced).
std::string file_stem_for(const std::string& image_id);

}  // namespace dpmm::io
