// Copyright 2026 The dpmm-anomaly Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) { return dpmm::cli::run(argc, argv); }
