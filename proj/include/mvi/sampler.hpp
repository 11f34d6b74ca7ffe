// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Euler integration of the learned velocity field from t = 1 (noise) to t = 0
// with three-scale nested classifier-free guidance over the condition chain
// {} -> prompt -> prompt + subjects -> prompt + subjects + source video.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mvi/cfi.hpp"
#include "mvi/dit.hpp"
#include "mvi/toygen.hpp"

namespace mvi::sampler {

struct GuidanceScales {
  double s1 = 7.5;  ///< prompt
  double s2 = 3.5;  ///< subjects
  double s3 = 1.5;  ///< source video

  void validate() const;
  bool operator==(const GuidanceScales&) const = default;
};

/// Parses "S1,S2,S3".
GuidanceScales parse_scales(const std::string& text);

/// v000 + s1 (vp00 - v000) + s2 (vpi0 - vp00) + s3 (vpiv - vpi0).
template <typename T>
Tensor<T> joint_cfg(const Tensor<T>& v000, const Tensor<T>& vp00, const Tensor<T>& vpi0, const Tensor<T>& vpiv,
                    const GuidanceScales& scales);

struct SampleRequest {
  cfi::ConditionSet<float> conditions;
  int steps = 50;
  GuidanceScales scales;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SampleResult {
  Array video;           ///< f x c x h x w, decoded and unclamped
  Array subject_frames;  ///< n x c x h x w
  Array video_latent;    ///< f x c_l x h_l x w_l at t = 0
};

/// Velocity for a packed input and model tokens.
using VelocityFn = std::function<Array(const cfi::PackedInput<float>&, const std::vector<std::int64_t>&)>;

/// Initial noise of a request: (f + n) x c_l x h_l x w_l.
Array initial_noise(const SampleRequest& request);

SampleResult euler_sample(const VelocityFn& model, const SampleRequest& request, std::size_t patch = 4);
SampleResult euler_sample(const dit::Parameters& params, const SampleRequest& request, std::size_t patch = 4);

/// Video clamped into [0, 1].
Array clamp_unit(Array video);

struct CaseOutput {
  std::string case_id;
  std::optional<SampleResult> result;
  std::string error;
};

/// Seed used for a case: independent of its position in the bench.
std::uint64_t case_seed(std::uint64_t seed, const std::string& case_id);

/// Samples every case; a failing case records its error and the batch continues.
std::vector<CaseOutput> batch_infer(const dit::Parameters& params, const std::vector<toygen::EvalCase>& bench,
                                    const GuidanceScales& scales, int steps, std::uint64_t seed,
                                    std::size_t patch = 4);

/// Writes frame PNGs (clamped) and an OITF tensor per case under `dir/<case_id>/`.
void write_outputs(const std::vector<CaseOutput>& outputs, const std::filesystem::path& dir);

}  // namespace mvi::sampler
