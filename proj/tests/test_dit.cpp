// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mvi/simd.hpp"

using namespace mvi;

namespace {

dit::ModelConfig small_model() {
  dit::ModelConfig c;
  c.width = 32;
  c.depth = 2;
  c.heads = 4;
  c.token_patch = 2;
  c.vocab = 24;
  c.max_frames = 12;
  c.mlp_ratio = 2;
  c.latent_channels = 4;
  c.latent_height = 8;
  c.latent_width = 8;
  return c;
}

cfi::PackedInput<float> random_input(const dit::ModelConfig& c, std::size_t f, std::size_t n, Rng& rng,
                                     double t = 0.4) {
  const auto conds = testing::random_conditions<float>(c, f, n, rng);
  const auto z = testing::random_tensor<float>({f + n, static_cast<std::size_t>(c.latent_channels),
                                                static_cast<std::size_t>(c.latent_height),
                                                static_cast<std::size_t>(c.latent_width)},
                                               rng);
  return cfi::pack(z, conds, t);
}

double max_abs_diff(const Array& a, const Array& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

double max_abs(const Array& a) {
  double m = 0;
  for (float v : a.span()) m = std::max(m, std::abs(double(v)));
  return m;
}

const std::vector<std::int64_t> kPrompt = {3, 11, 1, 5};

}  // namespace

TEST_SUITE("dit") {
  TEST_CASE("initialization is deterministic per seed") {
    const auto a = dit::init_params(small_model(), 9), b = dit::init_params(small_model(), 9);
    const auto c = dit::init_params(small_model(), 10);
    REQUIRE(a.arrays.size() == b.arrays.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.arrays.size(); ++i) {
      CHECK(a.arrays.name(i) == b.arrays.name(i));
      CHECK(a.arrays.at(i) == b.arrays.at(i));
      any_diff = any_diff || !(a.arrays.at(i) == c.arrays.at(i));
    }
    CHECK(any_diff);
  }

  TEST_CASE("velocity is zero at init with the contracted output shape") {
    Rng rng(1);
    const auto p = dit::attach_lora(dit::init_params(small_model(), 1), {4, 8.0, "lora"}, 2);
    const auto in = random_input(small_model(), 8, 2, rng);
    const auto v = dit::forward(p, in, kPrompt);
    CHECK(v.shape() == Shape{10, 4, 8, 8});
    CHECK(max_abs(v) == 0.0);
  }

  TEST_CASE("a fresh adapter does not change the output") {
    Rng rng(2);
    auto base = dit::init_params(small_model(), 3);
    testing::randomize(base, 4, 0.2);
    const auto with = dit::attach_lora(base, {4, 8.0, "lora"}, 5);
    const auto in = random_input(small_model(), 4, 1, rng);
    CHECK(dit::forward(base, in, kPrompt) == dit::forward(with, in, kPrompt));
    CHECK_THROWS_AS(dit::attach_lora(with, {4, 8.0, "lora"}, 6), Error);
  }

  TEST_CASE("merging an adapter preserves the function") {
    Rng rng(3);
    auto p = dit::attach_lora(dit::init_params(small_model(), 3), {4, 8.0, "lora"}, 5);
    testing::randomize(p, 6, 0.1);
    const auto in = random_input(small_model(), 4, 2, rng);
    const auto v = dit::forward(p, in, kPrompt);
    const auto merged = dit::merge_adapter(p, "lora");
    CHECK_FALSE(merged.has_adapter("lora"));
    for (const auto& n : merged.arrays.names()) CHECK(n.find(".lora_") == std::string::npos);
    const auto vm = dit::forward(merged, in, kPrompt);
    CHECK(max_abs(v) > 1e-3);
    CHECK(max_abs_diff(v, vm) <= 1e-4 * (1 + max_abs(v)));
  }

  TEST_CASE("the reference view ignores only the policy adapter") {
    Rng rng(4);
    auto p = dit::attach_lora(dit::init_params(small_model(), 3), {4, 8.0, "lora"}, 5);
    testing::randomize(p, 7, 0.1);
    const auto without = p;
    p = dit::attach_lora(p, {4, 8.0, "policy"}, 8);
    for (const auto& n : p.arrays.names())
      if (n.find(".policy_b") != std::string::npos) {
        for (auto& x : p.arrays.get(n).span()) x = 0.05f;
      }
    const auto in = random_input(small_model(), 4, 1, rng);
    const auto ref = dit::forward(p, in, kPrompt, {false});
    CHECK(ref == dit::forward(without, in, kPrompt));
    CHECK(max_abs_diff(dit::forward(p, in, kPrompt, {true}), ref) > 1e-4);
  }

  TEST_CASE("trainable sets per phase") {
    auto p = dit::attach_lora(dit::init_params(small_model(), 3), {4, 8.0, "lora"}, 5);
    const auto early = dit::trainable_names(p, 1);
    CHECK(early == dit::trainable_names(p, 3));
    CHECK_THROWS_AS(dit::trainable_names(p, 4), Error);
    p = dit::attach_lora(p, {4, 8.0, "policy"}, 6);
    const auto late = dit::trainable_names(p, 4);
    CHECK_FALSE(late.empty());
    for (const auto& n : late) {
      CHECK(n.find(".policy_") != std::string::npos);
      CHECK(early.count(n) == 0);
    }
    bool has_block_base = false;
    for (const auto& n : p.arrays.names()) {
      if (n.rfind("blocks.", 0) == 0 && n.find(".lora_") == std::string::npos && n.find(".policy_") == std::string::npos) {
        has_block_base = true;
        CHECK(early.count(n) == 0);
      }
    }
    CHECK(has_block_base);
    const auto flags = dit::trainable_flags(p, late);
    std::size_t on = 0;
    for (bool b : flags) on += b;
    CHECK(on == late.size());
    CHECK(dit::count_elements(p.arrays, late) > 0);
  }

  TEST_CASE("video frames attend to subject frames and the prompt") {
    Rng rng(5);
    auto p = dit::attach_lora(dit::init_params(small_model(), 3), {4, 8.0, "lora"}, 5);
    testing::randomize(p, 9, 0.2);
    auto in = random_input(small_model(), 4, 1, rng);
    const auto v = dit::forward(p, in, kPrompt);
    // Perturb only the subject frame's condition channels.
    auto in2 = in;
    const std::size_t hw = 64, c = 9;
    for (std::size_t i = 0; i < 4 * hw; ++i) in2.data[(4 * c + 4) * hw + i] += 1.0f;
    const auto v2 = dit::forward(p, in2, kPrompt);
    CHECK(max_abs_diff(slice0(v, 0, 4), slice0(v2, 0, 4)) > 1e-5);
    const std::vector<std::int64_t> other = {7, 2};
    CHECK(max_abs_diff(v, dit::forward(p, in, other)) > 1e-5);
    auto in3 = in;
    in3.t = 0.9;
    CHECK(max_abs_diff(v, dit::forward(p, in3, kPrompt)) > 1e-5);
  }

  TEST_CASE("float and double forwards agree") {
    Rng rng(6);
    auto p = dit::attach_lora(dit::init_params(small_model(), 3), {4, 8.0, "lora"}, 5);
    testing::randomize(p, 10, 0.2);
    const auto in = random_input(small_model(), 3, 2, rng);
    const auto vf = dit::forward(p, in, kPrompt);
    const auto pd = dit::cast_params<double>(p);
    cfi::PackedInput<double> ind{tensor_cast<double>(in.data), in.frames, in.subjects, in.t};
    const auto vd = tensor_cast<float>(dit::forward(pd, ind, kPrompt));
    CHECK(max_abs_diff(vf, vd) <= 1e-4 * (1 + max_abs(vd)));
  }

  TEST_CASE("scalar and AVX2 paths agree") {
    Rng rng(7);
    auto p = dit::attach_lora(dit::init_params(small_model(), 3), {4, 8.0, "lora"}, 5);
    testing::randomize(p, 11, 0.2);
    const auto in = random_input(small_model(), 4, 2, rng);
    const auto before = simd::active_isa();
    simd::set_isa(simd::Isa::kScalar);
    const auto vs = dit::forward(p, in, kPrompt);
    simd::set_isa(simd::detected_isa());
    const auto vv = dit::forward(p, in, kPrompt);
    simd::set_isa(before);
    CHECK(max_abs_diff(vs, vv) <= 1e-4 * (1 + max_abs(vs)));
  }

  TEST_CASE("forward is deterministic") {
    Rng rng(8);
    auto p = dit::attach_lora(dit::init_params(small_model(), 3), {4, 8.0, "lora"}, 5);
    testing::randomize(p, 12, 0.2);
    const auto in = random_input(small_model(), 4, 2, rng);
    CHECK(dit::forward(p, in, kPrompt) == dit::forward(p, in, kPrompt));
  }

  TEST_CASE("invalid inputs and configs are rejected") {
    Rng rng(9);
    const auto p = dit::init_params(small_model(), 3);
    CHECK_THROWS_AS(dit::forward(p, random_input(small_model(), 11, 2, rng), kPrompt), ShapeError);
    auto in = random_input(small_model(), 4, 1, rng);
    const std::vector<std::int64_t> bad = {24};
    CHECK_THROWS_AS(dit::forward(p, in, bad), Error);
    in.t = 1.5;
    CHECK_THROWS_AS(dit::forward(p, in, kPrompt), Error);
    auto c = small_model();
    c.heads = 5;
    CHECK_THROWS_AS(c.validate(), Error);
    c = small_model();
    c.token_patch = 3;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK_THROWS_AS(dit::merge_adapter(p, "lora"), Error);
    CHECK_THROWS_AS(dit::attach_lora(p, {0, 1.0, "lora"}, 1), Error);
  }
}
