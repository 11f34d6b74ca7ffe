// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "mvi/tensor.hpp"

namespace mvi {

/// Writes one c x h x w frame (c = 1 or 3, values clamped to [0,1]) as an 8-bit PNG.
void write_png(const std::filesystem::path& path, const float* frame, std::size_t channels,
               std::size_t height, std::size_t width);

}  // namespace mvi
