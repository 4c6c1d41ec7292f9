// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace dpmm::cli {

// Process exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kIo = 3;
inline constexpr int kData = 4;

/// Parses argv and runs one subcommand. Diagnostics go to stderr as a single
/// line; the return value is the process exit status.
int run(int argc, const char* const* argv);

/// Convenience overload; args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace dpmm::cli
