// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "helpers.hpp"
#include "mvi/losses.hpp"

using namespace mvi;

namespace {

double channel_sum(const Array& a, std::size_t frame, std::size_t ch) {
  double s = 0;
  const std::size_t hw = a.dim(2) * a.dim(3);
  for (std::size_t i = 0; i < hw; ++i) s += a[(frame * a.dim(1) + ch) * hw + i];
  return s;
}

bool channels_equal(const Array& packed, std::size_t frame, std::size_t first, const Array& src, std::size_t src_frame) {
  const std::size_t c = src.dim(1), hw = src.dim(2) * src.dim(3);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i)
      if (packed[(frame * packed.dim(1) + first + ch) * hw + i] != src[(src_frame * c + ch) * hw + i]) return false;
  return true;
}

bool all_zero(const Array& a) {
  for (float v : a.span())
    if (v != 0.0f) return false;
  return true;
}

}  // namespace

TEST_SUITE("cfi") {
  TEST_CASE("video stream layout") {
    Rng rng(1);
    const auto z = testing::random_tensor<float>({8, 4, 8, 8}, rng);
    const auto src = testing::random_tensor<float>({8, 4, 8, 8}, rng);
    const auto v = cfi::pack_video_stream(z, src);
    CHECK(v.shape() == Shape{8, 9, 8, 8});
    for (std::size_t k = 0; k < 8; ++k) {
      CHECK(channel_sum(v, k, 8) == 0.0);
      CHECK(channels_equal(v, k, 0, z, k));
      CHECK(channels_equal(v, k, 4, src, k));
    }
  }

  TEST_CASE("subject stream layout") {
    Rng rng(2);
    const auto z = testing::random_tensor<float>({1, 4, 8, 8}, rng);
    const auto s = cfi::pack_subject_stream(z, z);
    CHECK(s.shape() == Shape{1, 9, 8, 8});
    CHECK(channel_sum(s, 0, 8) == 64.0);
    const auto two = testing::random_tensor<float>({2, 4, 8, 8}, rng);
    CHECK(cfi::pack_subject_stream(two, two).shape() == Shape{2, 9, 8, 8});
  }

  TEST_CASE("noisy half equals the clean half at t = 0") {
    Rng rng(3);
    const auto clean = testing::random_tensor<float>({2, 4, 8, 8}, rng);
    const auto eps = testing::random_tensor<float>({2, 4, 8, 8}, rng);
    const auto s = cfi::pack_subject_stream(losses::flow_interpolate(clean, eps, 0.0), clean);
    for (std::size_t k = 0; k < 2; ++k) CHECK(channels_equal(s, k, 0, clean, k));
  }

  TEST_CASE("assembly puts video frames first and splits back bitwise") {
    Rng rng(4);
    for (int r = 0; r < 10; ++r) {
      const std::size_t f = 2 + rng.below(7), n = 1 + rng.below(2), c = 1 + rng.below(5);
      const auto vb = cfi::pack_video_stream(testing::random_tensor<float>({f, c, 4, 4}, rng),
                                             testing::random_tensor<float>({f, c, 4, 4}, rng));
      const auto sb = cfi::pack_subject_stream(testing::random_tensor<float>({n, c, 4, 4}, rng),
                                               testing::random_tensor<float>({n, c, 4, 4}, rng));
      const auto in = cfi::assemble_input(vb, sb, 0.3);
      CHECK(in.data.dim(0) == f + n);
      CHECK(in.frames == f);
      CHECK(in.subjects == n);
      CHECK(in.t == 0.3);
      CHECK(channel_sum(in.data, f - 1, 2 * c) == 0.0);
      CHECK(channel_sum(in.data, f, 2 * c) == 16.0);
      // The flag channel alone identifies each frame's stream.
      for (std::size_t k = 0; k < f + n; ++k) CHECK((channel_sum(in.data, k, 2 * c) > 0) == (k >= f));
      const auto [v2, s2] = cfi::split_input(in);
      CHECK(v2 == vb);
      CHECK(s2 == sb);
    }
  }

  TEST_CASE("mismatched shapes are rejected") {
    CHECK_THROWS_AS(cfi::pack_video_stream(Array({8, 4, 8, 8}), Array({7, 4, 8, 8})), ShapeError);
    CHECK_THROWS_AS(cfi::pack_subject_stream(Array({1, 4, 8, 8}), Array({1, 3, 8, 8})), ShapeError);
    CHECK_THROWS_AS(cfi::assemble_input(Array({8, 9, 8, 8}), Array({1, 9, 4, 8}), 0.5), ShapeError);
    CHECK_THROWS_AS(cfi::assemble_input(Array({8, 9, 8, 8}), Array({1, 7, 8, 8}), 0.5), ShapeError);
  }

  TEST_CASE("combos zero absent conditions along the nesting chain") {
    Rng rng(5);
    const auto full = testing::random_conditions<float>(testing::tiny_model(), 4, 2, rng);
    const auto piv = cfi::apply_combo(full, cfi::Combo::kAll);
    CHECK(piv.source == full.source);
    CHECK(piv.subjects == full.subjects);
    CHECK(piv.prompt == full.prompt);
    CHECK((piv.has_prompt && piv.has_subjects && piv.has_source));

    const auto pi0 = cfi::apply_combo(full, cfi::Combo::kPromptSubject);
    CHECK(all_zero(pi0.source));
    CHECK(pi0.source.shape() == full.source.shape());
    CHECK(pi0.subjects == full.subjects);
    CHECK(pi0.prompt == full.prompt);
    CHECK_FALSE(pi0.has_source);

    const auto p00 = cfi::apply_combo(full, cfi::Combo::kPrompt);
    CHECK(all_zero(p00.subjects));
    CHECK(p00.prompt == full.prompt);

    const auto none = cfi::apply_combo(full, cfi::Combo::kNone);
    CHECK(all_zero(none.source));
    CHECK(all_zero(none.subjects));
    CHECK(none.prompt.empty());
    CHECK_FALSE((none.has_prompt || none.has_subjects || none.has_source));
    CHECK(none.model_tokens() == std::vector<std::int64_t>{cfi::kNullToken});

    // Presence sets form a chain.
    auto level = [](const cfi::ConditionSet<float>& c) { return int(c.has_prompt) + int(c.has_subjects) + int(c.has_source); };
    for (cfi::Combo c : cfi::kAllCombos) {
      const auto s = cfi::apply_combo(full, c);
      CHECK(level(s) == static_cast<int>(c));
      if (s.has_subjects) CHECK(s.has_prompt);
      if (s.has_source) CHECK(s.has_subjects);
    }
  }

  TEST_CASE("combo names round trip") {
    for (cfi::Combo c : cfi::kAllCombos) CHECK(cfi::combo_from_string(cfi::to_string(c)) == c);
    CHECK_THROWS_AS(cfi::combo_from_string("ppp"), Error);
  }
}
