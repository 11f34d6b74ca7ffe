// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "mvi/cfi.hpp"
#include "mvi/dit.hpp"
#include "mvi/rng.hpp"
#include "mvi/tensor.hpp"

namespace mvi::testing {

/// A model small enough for finite differences in double precision.
inline dit::ModelConfig tiny_model() {
  dit::ModelConfig c;
  c.width = 8;
  c.depth = 2;
  c.heads = 2;
  c.token_patch = 2;
  c.vocab = 20;
  c.max_frames = 6;
  c.mlp_ratio = 2;
  c.latent_channels = 3;
  c.latent_height = 4;
  c.latent_width = 4;
  return c;
}

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double sd = 1.0) {
  Tensor<T> t(std::move(s));
  rng.fill_normal(t, sd);
  return t;
}

/// Every array perturbed so zero-initialized projections carry gradient.
template <typename T>
void randomize(dit::ModelParams<T>& p, std::uint64_t seed, double sd = 0.3) {
  Rng rng(seed);
  for (std::size_t i = 0; i < p.arrays.size(); ++i) {
    auto& a = p.arrays.at(i);
    for (auto& v : a.span()) v += static_cast<T>(rng.normal() * sd);
  }
}

template <typename T>
cfi::ConditionSet<T> random_conditions(const dit::ModelConfig& c, std::size_t f, std::size_t n, Rng& rng) {
  cfi::ConditionSet<T> cs;
  const auto cl = static_cast<std::size_t>(c.latent_channels);
  const auto hl = static_cast<std::size_t>(c.latent_height);
  const auto wl = static_cast<std::size_t>(c.latent_width);
  cs.source = random_tensor<T>({f, cl, hl, wl}, rng);
  cs.subjects = random_tensor<T>({n, cl, hl, wl}, rng);
  cs.prompt = {3, 11, 1, 5};
  return cs;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static int counter = 0;
  auto p = std::filesystem::temp_directory_path() /
           ("mvi-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace mvi::testing
