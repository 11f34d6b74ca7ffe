// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk datasets: one directory per sample holding `meta.json` (specs, seed,
// prompt tokens) and `tensors.oitf`. A dataset directory holds numbered
// sample directories plus an `index.json` naming its kind and entries.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvi/toygen.hpp"

namespace mvi::io {

using Json = nlohmann::ordered_json;

class DatasetError : public Error {
 public:
  using Error::Error;
};

Json to_json(const toygen::SubjectSpec& s);
Json to_json(const toygen::MotionSpec& m);
Json to_json(const toygen::SceneSpec& s);
toygen::SubjectSpec subject_from_json(const Json& j);
toygen::MotionSpec motion_from_json(const Json& j);
toygen::SceneSpec scene_from_json(const Json& j);

void write_sample(const std::filesystem::path& dir, const toygen::ToySample& sample);
toygen::ToySample read_sample(const std::filesystem::path& dir);

void write_pair(const std::filesystem::path& dir, const toygen::PreferencePair& pair);
toygen::PreferencePair read_pair(const std::filesystem::path& dir);

void write_case(const std::filesystem::path& dir, const toygen::EvalCase& c);
toygen::EvalCase read_case(const std::filesystem::path& dir);

/// Directory kinds recorded in index.json.
inline constexpr const char* kSamples = "samples";
inline constexpr const char* kPairs = "preference_pairs";
inline constexpr const char* kBench = "bench";

void write_samples(const std::filesystem::path& dir, const std::vector<toygen::ToySample>& samples);
void write_pairs(const std::filesystem::path& dir, const std::vector<toygen::PreferencePair>& pairs);
void write_bench(const std::filesystem::path& dir, const std::vector<toygen::EvalCase>& bench);

/// Kind recorded in `dir`/index.json; throws DatasetError when missing.
std::string dataset_kind(const std::filesystem::path& dir);
std::vector<toygen::ToySample> read_samples(const std::filesystem::path& dir);
std::vector<toygen::PreferencePair> read_pairs(const std::filesystem::path& dir);
std::vector<toygen::EvalCase> read_bench(const std::filesystem::path& dir);

}  // namespace mvi::io
