// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// A run configuration is a single JSON document. Every field has a default and
// unknown keys are rejected at every nesting level.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "mvi/dit.hpp"
#include "mvi/losses.hpp"
#include "mvi/sampler.hpp"
#include "mvi/toygen.hpp"
#include "mvi/trainer.hpp"

namespace mvi::config {

using Json = nlohmann::ordered_json;

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct SamplerConfig {
  int steps = 50;
  sampler::GuidanceScales scales;
};

struct RunConfig {
  std::uint64_t seed = 0;
  toygen::GenConfig data;
  std::size_t patch = 4;
  dit::ModelConfig model;
  dit::LoraConfig lora{8, 16.0, "lora"};
  dit::LoraConfig policy{8, 16.0, "policy"};
  losses::LossWeights loss;
  train::OptimizerConfig optim;
  train::ScheduleConfig schedule;
  int preference_pairs = 64;
  SamplerConfig sampler;

  /// Field ranges plus agreement between the data, patch and model shapes.
  void validate() const;
};

Json to_json(const dit::ModelConfig& c);
dit::ModelConfig model_from_json(const Json& j);
Json to_json(const dit::LoraConfig& c);
dit::LoraConfig lora_from_json(const Json& j, const std::string& slot);
Json to_json(const toygen::GenConfig& c);
toygen::GenConfig gen_from_json(const Json& j);

Json to_json(const RunConfig& c);
RunConfig from_json(const Json& j);
RunConfig load(const std::filesystem::path& path);

/// Defaults with the model shape derived from the data shape and patch.
RunConfig default_run_config();

/// FNV-1a of the canonical (dumped) form, as 16 hex digits.
std::string hash(const RunConfig& c);

}  // namespace mvi::config
