// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Condition-specific feature injection: assembles the single diffusion input
// from the noisy latents and the two condition kinds.
//
// The source video is frame-aligned with the noisy target, so it is
// concatenated along channels. Subject latents need to interact with every
// frame, so they are appended along the frame axis. A flag channel tells the
// streams apart:
//
//   frames [0, f)     : [noisy target | source latent | 0]
//   frames [f, f + n) : [noisy subject | clean subject | 1]

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mvi/tensor.hpp"

namespace mvi::cfi {

/// The nested condition arms of joint guidance: {}, {p}, {p,i}, {p,i,v}.
enum class Combo { kNone = 0, kPrompt = 1, kPromptSubject = 2, kAll = 3 };
inline constexpr std::array<Combo, 4> kAllCombos = {Combo::kNone, Combo::kPrompt,
                                                    Combo::kPromptSubject, Combo::kAll};

inline const char* to_string(Combo c) {
  constexpr std::array<const char*, 4> n = {"000", "p00", "pi0", "piv"};
  return n[static_cast<std::size_t>(c)];
}

inline Combo combo_from_string(const std::string& s) {
  for (Combo c : kAllCombos)
    if (s == to_string(c)) return c;
  throw Error("unknown condition combo '" + s + "'");
}

inline constexpr std::int64_t kNullToken = 0;

template <typename T>
struct ConditionSet {
  std::vector<std::int64_t> prompt;  ///< ignored when !has_prompt
  Tensor<T> subjects;                ///< n x c_l x h_l x w_l, zeros when absent
  Tensor<T> source;                  ///< f x c_l x h_l x w_l, zeros when absent
  bool has_prompt = true;
  bool has_subjects = true;
  bool has_source = true;

  /// Tokens the model sees: the prompt, or the single null token.
  std::vector<std::int64_t> model_tokens() const {
    if (!has_prompt || prompt.empty()) return {kNullToken};
    return prompt;
  }
};

template <typename T>
struct PackedInput {
  Tensor<T> data;  ///< (f + n) x (2 c_l + 1) x h_l x w_l
  std::size_t frames = 0;
  std::size_t subjects = 0;
  double t = 0.0;
};

namespace detail {
template <typename T>
Tensor<T> pack_stream(const Tensor<T>& noisy, const Tensor<T>& cond, T flag, const char* what) {
  if (noisy.rank() != 4 || noisy.shape() != cond.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_str(noisy.shape()) + " and " +
                     shape_str(cond.shape()) + " must match");
  }
  const std::size_t f = noisy.dim(0), c = noisy.dim(1), hw = noisy.dim(2) * noisy.dim(3);
  Tensor<T> out({f, 2 * c + 1, noisy.dim(2), noisy.dim(3)});
  for (std::size_t k = 0; k < f; ++k) {
    T* o = out.data() + k * (2 * c + 1) * hw;
    std::copy_n(noisy.data() + k * c * hw, c * hw, o);
    std::copy_n(cond.data() + k * c * hw, c * hw, o + c * hw);
    std::fill_n(o + 2 * c * hw, hw, flag);
  }
  return out;
}
}  // namespace detail

/// Noisy target latent + source latent along channels, flag 0.
template <typename T>
Tensor<T> pack_video_stream(const Tensor<T>& noisy_target, const Tensor<T>& source) {
  return detail::pack_stream(noisy_target, source, T(0), "pack_video_stream");
}

/// Noisy subject latents + clean subject latents along channels, flag 1.
template <typename T>
Tensor<T> pack_subject_stream(const Tensor<T>& noisy_subjects, const Tensor<T>& subjects) {
  return detail::pack_stream(noisy_subjects, subjects, T(1), "pack_subject_stream");
}

template <typename T>
PackedInput<T> assemble_input(const Tensor<T>& video_block, const Tensor<T>& subject_block, double t) {
  if (video_block.rank() != 4 || subject_block.rank() != 4 ||
      video_block.dim(1) % 2 != 1 || video_block.dim(1) != subject_block.dim(1) ||
      video_block.dim(2) != subject_block.dim(2) || video_block.dim(3) != subject_block.dim(3)) {
    throw ShapeError("assemble_input: " + shape_str(video_block.shape()) + " vs " +
                     shape_str(subject_block.shape()));
  }
  return {concat0(video_block, subject_block), video_block.dim(0), subject_block.dim(0), t};
}

/// Inverse of assemble_input: (video block, subject block).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_input(const PackedInput<T>& in) {
  return {slice0(in.data, 0, in.frames), slice0(in.data, in.frames, in.frames + in.subjects)};
}

/// Zeroes and marks absent every condition outside the nested arm.
template <typename T>
ConditionSet<T> apply_combo(ConditionSet<T> conds, Combo combo) {
  const int level = static_cast<int>(combo);
  if (level < 1) {
    conds.has_prompt = false;
    conds.prompt.clear();
  }
  if (level < 2) {
    conds.has_subjects = false;
    conds.subjects.fill(T(0));
  }
  if (level < 3) {
    conds.has_source = false;
    conds.source.fill(T(0));
  }
  return conds;
}

/// Full packed input for noisy latents z_t (video frames then subject frames).
template <typename T>
PackedInput<T> pack(const Tensor<T>& z_t, const ConditionSet<T>& conds, double t) {
  const std::size_t f = conds.source.dim(0);
  const std::size_t n = conds.subjects.dim(0);
  if (z_t.dim(0) != f + n) throw ShapeError("pack: z_t frame count does not match conditions");
  return assemble_input(pack_video_stream(slice0(z_t, 0, f), conds.source),
                        pack_subject_stream(slice0(z_t, f, f + n), conds.subjects), t);
}

}  // namespace mvi::cfi
