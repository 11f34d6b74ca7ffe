// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Small diffusion transformer predicting a velocity for every frame of a packed
// input.
//
// Each block runs three adaLN-Zero gated sub-layers: self-attention within each
// frame (2D), self-attention over all tokens of all frames including the
// subject frames (3D), and an MLP. The conditioning vector is a sinusoidal time
// embedding passed through a small MLP, plus the mean embedding of the prompt
// tokens. Position is a learned frame-index embedding plus a learned
// spatial-index embedding.
//
// Linear weights are stored input-major ([in x out]) so y = x W + b. Low-rank
// adapters add (alpha / rank) * (x A) B with A [in x r] and B [r x out]; two
// adapter slots exist: "lora" (trained in phases 1-3) and "policy" (the fresh
// adapter trained in the preference phase).
//
// The model is templated on the scalar so the same code runs in float for
// training and in double for finite-difference gradient checks.

#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvi/cfi.hpp"
#include "mvi/tensor.hpp"

namespace mvi::dit {

struct ModelConfig {
  int width = 128;
  int depth = 4;
  int heads = 4;
  int token_patch = 1;
  int vocab = 64;
  int max_frames = 16;
  int mlp_ratio = 4;
  int latent_channels = 48;
  int latent_height = 8;
  int latent_width = 8;

  int in_channels() const { return 2 * latent_channels + 1; }
  int out_channels() const { return latent_channels; }
  int tokens_per_frame() const {
    return (latent_height / token_patch) * (latent_width / token_patch);
  }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
  std::string slot = "lora";
};

struct AdapterInfo {
  std::string slot;
  int rank = 0;
  double alpha = 0.0;
  double scale() const { return alpha / rank; }
  bool operator==(const AdapterInfo&) const = default;
};

/// Insertion-ordered, uniquely named arrays.
template <typename T>
class NamedArrays {
 public:
  void add(const std::string& name, Tensor<T> value);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  Tensor<T>& get(const std::string& name) { return arrays_[index_of(name)]; }
  const Tensor<T>& get(const std::string& name) const { return arrays_[index_of(name)]; }
  Tensor<T>& at(std::size_t i) { return arrays_[i]; }
  const Tensor<T>& at(std::size_t i) const { return arrays_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return arrays_.size(); }
  std::size_t total_elements() const;
  /// Same names and shapes, all zeros.
  NamedArrays zeros_like() const;
  void set_zero();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> arrays_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::uint64_t init_seed = 0;
  std::vector<AdapterInfo> adapters;
  NamedArrays<T> arrays;

  bool has_adapter(const std::string& slot) const;
};

using Parameters = ModelParams<float>;

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out{p.config, p.init_seed, p.adapters, {}};
  for (std::size_t i = 0; i < p.arrays.size(); ++i) {
    out.arrays.add(p.arrays.name(i), tensor_cast<To>(p.arrays.at(i)));
  }
  return out;
}

/// Prefixes of the linear maps adapters attach to, e.g. "blocks.0.attn2d.qkv".
std::vector<std::string> adapter_targets(const ModelConfig& config);

/// Deterministic initialization with zero adaLN projections and a zero output
/// head, so the velocity is identically zero at init.
template <typename T = float>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Adds A (seeded normal) and B (zeros) for every target under `config.slot`.
/// Throws if the slot is already attached.
template <typename T>
ModelParams<T> attach_lora(ModelParams<T> params, const LoraConfig& config, std::uint64_t seed);

/// Folds an adapter slot into the base weights and removes its arrays.
template <typename T>
ModelParams<T> merge_adapter(ModelParams<T> params, const std::string& slot);

/// Names trained in a phase: phases 1-3 train the "lora" adapters, embeddings
/// and the head; phase 4 trains only the "policy" adapter.
template <typename T>
std::set<std::string> trainable_names(const ModelParams<T>& params, int phase);
template <typename T>
std::vector<bool> trainable_flags(const ModelParams<T>& params, const std::set<std::string>& names);

template <typename T>
std::size_t count_elements(const NamedArrays<T>& arrays, const std::set<std::string>& names);

struct ForwardOptions {
  /// When false the "policy" adapter slot is ignored (the frozen reference model).
  bool use_policy = true;
};

template <typename T>
struct LinearCache {
  std::vector<Tensor<T>> xa;  ///< x A per adapter
};

template <typename T>
struct SublayerCache {
  Tensor<T> u;      ///< normalized input
  Tensor<T> rstd;   ///< per-token 1/sigma
  Tensor<T> um;     ///< modulated input
  Tensor<T> qkv;    ///< attention only
  Tensor<T> probs;  ///< attention only, groups x heads x L x L
  Tensor<T> att;    ///< attention only, merged heads
  Tensor<T> pre;    ///< MLP only, pre-activation
  Tensor<T> hidden; ///< MLP only, post-activation
  Tensor<T> out;    ///< sub-layer output before the gate
  LinearCache<T> first, second;
};

template <typename T>
struct BlockCache {
  Tensor<T> mod;  ///< 9d: (shift, scale, gate) for the three sub-layers
  LinearCache<T> mod_lc;
  SublayerCache<T> sub[3];
};

template <typename T>
struct ForwardCache {
  std::size_t frames = 0;
  std::vector<std::int64_t> prompt;
  Tensor<T> tokens;  ///< patchified input, N x (C_in q^2)
  Tensor<T> t_freq, t_pre, t_act, cond, cond_act;
  std::vector<BlockCache<T>> blocks;
  Tensor<T> final_mod, final_u, final_rstd, final_um;
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelParams<T>& params, ForwardOptions options = {});
  ~Model();
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Velocity for every packed frame: (f + n) x c_l x h_l x w_l.
  Tensor<T> forward(const cfi::PackedInput<T>& input, std::span<const std::int64_t> prompt,
                    ForwardCache<T>* cache = nullptr) const;

  /// Accumulates d(loss)/d(param) into `grads` for arrays flagged trainable.
  void backward(const ForwardCache<T>& cache, const Tensor<T>& d_velocity, NamedArrays<T>& grads,
                const std::vector<bool>& trainable) const;

  const ModelParams<T>& params() const { return params_; }

 private:
  struct Impl;
  const ModelParams<T>& params_;
  std::unique_ptr<Impl> impl_;
};

/// Convenience wrapper around Model::forward.
template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const cfi::PackedInput<T>& input,
                  std::span<const std::int64_t> prompt, ForwardOptions options = {});

}  // namespace mvi::dit
