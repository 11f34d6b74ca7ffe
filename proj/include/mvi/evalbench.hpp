// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Pixel-space evaluation of generated clips against the generator's ground
// truth, the bench runner, and the ablation table.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvi/config.hpp"
#include "mvi/dit.hpp"
#include "mvi/sampler.hpp"
#include "mvi/toygen.hpp"

namespace mvi::eval {

inline constexpr double kColorTolerance = 0.15;
inline constexpr double kMinAreaRatio = 0.5;
inline constexpr double kMaxAreaRatio = 2.0;
inline constexpr double kMinFrameFraction = 0.7;

/// 1 - clamp(MSE inside the union of `masks`, 0, 1). Throws on an empty union.
double subject_consistency(const Array& gen, const Array& target, const std::vector<Mask>& masks);

/// MSE outside the union of `masks` dilated by one pixel (3x3).
double background_preservation(const Array& gen, const Array& source, const std::vector<Mask>& masks);

/// True when, in at least 70% of the frames where the subject is expected to
/// be visible, some 4-connected component of pixels within L-inf 0.15 of the
/// subject color has area within [0.5, 2] x the expected area.
bool insertion_success(const Array& gen, const toygen::SubjectSpec& subject, const Mask& expected);

/// Mean absolute difference between consecutive frames. Throws if f < 2.
double temporal_smoothness(const Array& gen);

struct CaseRecord {
  std::string case_id;
  double subject_consistency = 0;
  double background_mse = 0;
  std::vector<int> insertion_success;
  double temporal_smoothness = 0;
  /// Non-empty when the case failed to generate; metrics are then unset.
  std::string error;

  bool operator==(const CaseRecord&) const = default;
};

struct Summary {
  std::size_t cases = 0;
  std::size_t failed = 0;
  double subject_consistency = 0;
  double background_mse = 0;
  double temporal_smoothness = 0;
  /// Fraction of inserted subjects detected, over all subjects of all cases.
  double success_rate = 0;

  bool operator==(const Summary&) const = default;
};

struct EvalReport {
  std::vector<CaseRecord> cases;

  Summary summary() const;
  /// One JSON line per case followed by one summary line.
  std::string to_jsonl() const;
  static EvalReport from_jsonl(const std::string& text);
  bool operator==(const EvalReport&) const = default;
};

CaseRecord evaluate_case(const toygen::EvalCase& c, const Array& gen);

/// Metrics of sampled outputs; videos are clamped to [0, 1] first.
EvalReport evaluate(const std::vector<toygen::EvalCase>& bench, const std::vector<sampler::CaseOutput>& outputs);

/// Report on the ground-truth targets, bypassing any model.
EvalReport evaluate_targets(const std::vector<toygen::EvalCase>& bench);

EvalReport run_bench(const dit::Parameters& params, const std::vector<toygen::EvalCase>& bench,
                     const sampler::GuidanceScales& scales, int steps, std::uint64_t seed, std::size_t patch = 4);

void write_report(const std::filesystem::path& path, const EvalReport& report);

/// Held-out subject-region reconstruction error: for each sample and
/// t in {0.25, 0.5, 0.75}, the one-step clean estimate z_t + t v is decoded and
/// compared with the target inside the union subject mask.
double subject_region_mse(const dit::Parameters& params, const std::vector<toygen::ToySample>& samples,
                          std::uint64_t seed, std::size_t patch = 4);

/// Held-out samples disjoint from the training key space.
std::vector<toygen::ToySample> held_out_samples(const toygen::GenConfig& config, std::size_t count);

struct AblationRow {
  std::string name;
  Summary summary;
  double subject_region_mse = 0;
};

struct AblationOptions {
  bool no_sl = true;
  bool single_stage = true;
  int sample_steps = 50;
  std::size_t held_out = 16;
};

/// Trains "full" and the requested variants with phases 1-3 and evaluates each
/// on the bench. "w/o SL" sets the subject-focused weight to zero; "w/o PT"
/// trains the full task in one stage for the same total number of steps.
std::vector<AblationRow> run_ablation(const config::RunConfig& config, const AblationOptions& options,
                                      const std::function<void(const std::string&)>& progress = {});

std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace mvi::eval
