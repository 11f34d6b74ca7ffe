// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Four-phase progressive training: subject-only pretraining, full-task
// pretraining, curated refinement and preference optimization of a fresh
// policy adapter against the frozen phase-3 model.
//
// All randomness of a step is derived from (seed, phase, step, slot), so a run
// resumed from a checkpoint continues bitwise identically.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mvi/cfi.hpp"
#include "mvi/dit.hpp"
#include "mvi/losses.hpp"
#include "mvi/rng.hpp"
#include "mvi/toygen.hpp"

namespace mvi::train {

inline constexpr int kNumPhases = 4;

class PhaseGateError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Probabilities over the arms {000, p00, pi0, piv}.
struct ComboDistribution {
  std::array<double, 4> probs{0.05, 0.05, 0.10, 0.80};
  void validate() const;
};

/// Categorical draw; in phase 1 a piv draw is returned as pi0.
cfi::Combo sample_combo(Rng& rng, const ComboDistribution& dist, int phase = 2);

struct PhaseConfig {
  int phase = 1;
  int steps = 1400;
  int batch_size = 8;
  double lr = 1e-3;
  /// "mixed", "curated" or "preference".
  std::string dataset = "mixed";
  /// Generator-variant mixing weights for the phase's samples.
  std::array<double, toygen::kNumVariants> mixture{5, 2, 2, 1};
  ComboDistribution combos;

  void validate() const;
};

struct ScheduleConfig {
  std::array<int, kNumPhases> steps{1400, 600, 200, 160};
  int batch_size = 8;
  double lr = 1e-3;
  std::array<double, toygen::kNumVariants> mixture{5, 2, 2, 1};
  /// Occluder- and multi-subject-heavy mixture for phase 3.
  std::array<double, toygen::kNumVariants> curated_mixture{1, 3, 3, 3};
  ComboDistribution combos;
};

/// The ordered plan for phases 1..4.
std::vector<PhaseConfig> build_schedule(const ScheduleConfig& config);

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int warmup = 20;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;

  void validate() const;
};

/// Learning rate after `step` completed steps: linear warmup then cosine decay to 0.
double lr_at(double base_lr, int step, int total, int warmup);

/// True for arrays that receive weight decay (matrices other than embedding tables).
bool decays(const std::string& name, const Shape& shape);

struct MetricRecord {
  std::int64_t step = 0;
  int phase = 0;
  double loss = 0.0;
  /// Effective combo per batch slot, comma separated.
  std::string combo;
  double wall_ms = 0.0;
};

std::string to_json_line(const MetricRecord& r);

struct TrainState {
  dit::Parameters params;
  /// Adam moments for the arrays trained in `phase`.
  dit::NamedArrays<float> adam_m, adam_v;
  std::uint64_t seed = 0;
  /// Last phase run on these parameters; 0 for a fresh initialization.
  int phase = 0;
  /// Steps completed in `phase`.
  std::int64_t step = 0;
  bool complete = true;
  /// Most recent metric records, oldest first.
  std::vector<MetricRecord> metrics;
};

inline constexpr std::size_t kMetricsCapacity = 256;

/// init_params plus the phase 1-3 adapter.
TrainState fresh_state(const dit::ModelConfig& model, const dit::LoraConfig& lora, std::uint64_t seed);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Source of training samples addressed by a 64-bit key.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual toygen::ToySample get(std::uint64_t key) const = 0;
};

/// Samples generated on the fly.
class GeneratedSource : public SampleSource {
 public:
  explicit GeneratedSource(toygen::GenConfig config);
  toygen::ToySample get(std::uint64_t key) const override;
  const toygen::GenConfig& config() const { return config_; }

 private:
  toygen::GenConfig config_;
};

/// A fixed set of samples, indexed by key modulo its size.
class FixedSource : public SampleSource {
 public:
  explicit FixedSource(std::vector<toygen::ToySample> samples);
  toygen::ToySample get(std::uint64_t key) const override;
  std::size_t size() const { return samples_.size(); }

 private:
  std::vector<toygen::ToySample> samples_;
};

/// Keeps only samples whose variant has positive weight in `mixture`.
std::vector<toygen::ToySample> select_variants(std::vector<toygen::ToySample> samples,
                                               const std::array<double, toygen::kNumVariants>& mixture);

struct PhaseData {
  const SampleSource* samples = nullptr;
  const std::vector<toygen::PreferencePair>* pairs = nullptr;
};

struct TrainerOptions {
  losses::LossWeights loss;
  OptimizerConfig optim;
  dit::LoraConfig policy{8, 16.0, "policy"};
  std::size_t patch = 4;
  /// Appends one JSON line per step when non-empty.
  std::filesystem::path metrics_log;
  /// Writes a checkpoint every N steps (0 disables) to `checkpoint_path`.
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  std::function<void(const MetricRecord&)> on_step;
};

/// Per-step mean losses of one run_phase call.
struct PhaseResult {
  std::vector<double> losses;
};

/// Trains `state` through `config.phase`, resuming an incomplete phase or
/// starting it from the completed previous phase. Stops early after
/// `max_steps` steps when given.
PhaseResult run_phase(TrainState& state, const PhaseConfig& config, const PhaseData& data,
                      const TrainerOptions& options, std::optional<int> max_steps = std::nullopt);

/// The combined loss of one sample at a fixed (t, eps, combo) and optionally
/// its gradient, accumulated with weight `grad_scale`.
struct SampleBatchItem {
  cfi::ConditionSet<float> conditions;
  Array z0;
  Array eps;
  Array mask;
  double t = 0.0;
};
SampleBatchItem make_item(const toygen::ToySample& sample, cfi::Combo combo, Rng& rng, std::size_t patch);
double item_loss(const dit::Model<float>& model, const SampleBatchItem& item, const losses::LossWeights& w,
                 dit::NamedArrays<float>* grads = nullptr, const std::vector<bool>* trainable = nullptr,
                 float grad_scale = 1.0f);

/// One preference step on a pair with (eps, t) drawn once from `rng`.
struct IpoStep {
  losses::IpoTerms terms;
  double lw = 0, ll = 0, lw_ref = 0, ll_ref = 0;
  /// Gradients on every array; nonzero only on the policy adapter.
  dit::NamedArrays<float> grads;
};
IpoStep ipo_step(const dit::Parameters& params, const toygen::PreferencePair& pair, const losses::LossWeights& w,
                 Rng& rng, std::size_t patch = 4, bool with_grads = true);

/// Conditions (prompt, source latent, subject latents) of a sample.
cfi::ConditionSet<float> conditions_of(const toygen::ToySample& sample, std::size_t patch);

}  // namespace mvi::train
