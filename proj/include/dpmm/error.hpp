// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dpmm {

enum class Errc {
  invalid_argument,
  dimension_mismatch,
  numeric,
  io,
  bad_magic,
  unsupported_version,
  truncated,
  malformed,
};

/// Every failure raised by the library carries an Errc so callers (the CLI in
/// particular) can map it to a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, Errc code, const char* what) {
  if (!condition) throw Error(code, what);
}

}  // namespace dpmm
