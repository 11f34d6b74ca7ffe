// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "mvi/cli.hpp"

int main(int argc, char** argv) {
  return mvi::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
