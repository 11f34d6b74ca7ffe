// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// The `mvi` command line. Usage errors return 2, runtime failures 1.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace mvi::cli {

inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Source revision and compiler, fixed at build time.
std::string build_id();

/// Manifest path for an output: DIR/manifest.json for a directory output,
/// FILE.manifest.json otherwise.
std::filesystem::path manifest_path(const std::filesystem::path& output, bool is_directory);

}  // namespace mvi::cli
