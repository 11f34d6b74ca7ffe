// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Analytic identity suite run by `mvi selftest`.

#pragma once

#include <string>
#include <vector>

namespace mvi::selftest {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Runs every identity; never throws (an exception fails its check).
std::vector<Check> run_all();

bool all_passed(const std::vector<Check>& checks);

}  // namespace mvi::selftest
