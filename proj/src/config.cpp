// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "mvi/rng.hpp"

namespace mvi::config {
namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Json combos_json(const train::ComboDistribution& d) {
  Json j = Json::object();
  for (cfi::Combo c : cfi::kAllCombos) j[cfi::to_string(c)] = d.probs[static_cast<std::size_t>(c)];
  return j;
}

train::ComboDistribution combos_from(const Json& j, const std::string& where) {
  Fields f(j, where);
  train::ComboDistribution d;
  for (cfi::Combo c : cfi::kAllCombos) f.read(cfi::to_string(c), d.probs[static_cast<std::size_t>(c)]);
  f.finish();
  return d;
}

}  // namespace

Json to_json(const dit::ModelConfig& c) {
  return Json{{"width", c.width},
              {"depth", c.depth},
              {"heads", c.heads},
              {"token_patch", c.token_patch},
              {"vocab", c.vocab},
              {"max_frames", c.max_frames},
              {"mlp_ratio", c.mlp_ratio},
              {"latent_channels", c.latent_channels},
              {"latent_height", c.latent_height},
              {"latent_width", c.latent_width}};
}

dit::ModelConfig model_from_json(const Json& j) {
  dit::ModelConfig c;
  Fields f(j, "model");
  f.read("width", c.width);
  f.read("depth", c.depth);
  f.read("heads", c.heads);
  f.read("token_patch", c.token_patch);
  f.read("vocab", c.vocab);
  f.read("max_frames", c.max_frames);
  f.read("mlp_ratio", c.mlp_ratio);
  f.read("latent_channels", c.latent_channels);
  f.read("latent_height", c.latent_height);
  f.read("latent_width", c.latent_width);
  f.finish();
  return c;
}

Json to_json(const dit::LoraConfig& c) { return Json{{"rank", c.rank}, {"alpha", c.alpha}}; }

dit::LoraConfig lora_from_json(const Json& j, const std::string& slot) {
  dit::LoraConfig c{8, 16.0, slot};
  Fields f(j, slot);
  f.read("rank", c.rank);
  f.read("alpha", c.alpha);
  f.finish();
  return c;
}

Json to_json(const toygen::GenConfig& c) {
  return Json{{"frames", c.frames},   {"height", c.height},
              {"width", c.width},     {"vocab", c.vocab},
              {"variant_weights", c.variant_weights}, {"max_retries", c.max_retries}};
}

toygen::GenConfig gen_from_json(const Json& j) {
  toygen::GenConfig c;
  Fields f(j, "data");
  f.read("frames", c.frames);
  f.read("height", c.height);
  f.read("width", c.width);
  f.read("vocab", c.vocab);
  f.read("variant_weights", c.variant_weights);
  f.read("max_retries", c.max_retries);
  f.finish();
  return c;
}

Json to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["data"] = to_json(c.data);
  j["patch"] = c.patch;
  j["model"] = to_json(c.model);
  j["lora"] = to_json(c.lora);
  j["policy"] = to_json(c.policy);
  j["loss"] = Json{{"lambda1", c.loss.lambda1}, {"lambda2", c.loss.lambda2}, {"lambda", c.loss.lambda},
                   {"gamma", c.loss.gamma},     {"beta", c.loss.beta}};
  j["optim"] = Json{{"beta1", c.optim.beta1},
                    {"beta2", c.optim.beta2},
                    {"eps", c.optim.eps},
                    {"weight_decay", c.optim.weight_decay},
                    {"warmup", c.optim.warmup},
                    {"grad_clip", c.optim.grad_clip}};
  j["schedule"] = Json{{"steps", c.schedule.steps},
                       {"batch_size", c.schedule.batch_size},
                       {"lr", c.schedule.lr},
                       {"mixture", c.schedule.mixture},
                       {"curated_mixture", c.schedule.curated_mixture},
                       {"combos", combos_json(c.schedule.combos)}};
  j["preference_pairs"] = c.preference_pairs;
  j["sampler"] = Json{{"steps", c.sampler.steps},
                      {"scales", std::array<double, 3>{c.sampler.scales.s1, c.sampler.scales.s2, c.sampler.scales.s3}}};
  return j;
}

RunConfig from_json(const Json& j) {
  RunConfig c = default_run_config();
  Fields f(j, "config");
  f.read("seed", c.seed);
  if (const Json* d = f.child("data")) c.data = gen_from_json(*d);
  f.read("patch", c.patch);
  // Model shape follows the data unless given explicitly.
  c.model.latent_channels = 3 * static_cast<int>(c.patch * c.patch);
  c.model.latent_height = c.data.height / static_cast<int>(c.patch);
  c.model.latent_width = c.data.width / static_cast<int>(c.patch);
  c.model.vocab = c.data.vocab;
  if (const Json* m = f.child("model")) {
    Json merged = to_json(c.model);
    if (!m->is_object()) throw ConfigError("model: expected an object");
    for (auto it = m->begin(); it != m->end(); ++it) merged[it.key()] = it.value();
    c.model = model_from_json(merged);
  }
  if (const Json* l = f.child("lora")) c.lora = lora_from_json(*l, "lora");
  if (const Json* l = f.child("policy")) c.policy = lora_from_json(*l, "policy");
  if (const Json* l = f.child("loss")) {
    Fields g(*l, "loss");
    g.read("lambda1", c.loss.lambda1);
    g.read("lambda2", c.loss.lambda2);
    g.read("lambda", c.loss.lambda);
    g.read("gamma", c.loss.gamma);
    g.read("beta", c.loss.beta);
    g.finish();
  }
  if (const Json* o = f.child("optim")) {
    Fields g(*o, "optim");
    g.read("beta1", c.optim.beta1);
    g.read("beta2", c.optim.beta2);
    g.read("eps", c.optim.eps);
    g.read("weight_decay", c.optim.weight_decay);
    g.read("warmup", c.optim.warmup);
    g.read("grad_clip", c.optim.grad_clip);
    g.finish();
  }
  if (const Json* s = f.child("schedule")) {
    Fields g(*s, "schedule");
    g.read("steps", c.schedule.steps);
    g.read("batch_size", c.schedule.batch_size);
    g.read("lr", c.schedule.lr);
    g.read("mixture", c.schedule.mixture);
    g.read("curated_mixture", c.schedule.curated_mixture);
    if (const Json* cb = g.child("combos")) c.schedule.combos = combos_from(*cb, "schedule.combos");
    g.finish();
  }
  f.read("preference_pairs", c.preference_pairs);
  if (const Json* s = f.child("sampler")) {
    Fields g(*s, "sampler");
    g.read("steps", c.sampler.steps);
    std::array<double, 3> sc{c.sampler.scales.s1, c.sampler.scales.s2, c.sampler.scales.s3};
    g.read("scales", sc);
    c.sampler.scales = {sc[0], sc[1], sc[2]};
    g.finish();
  }
  f.finish();
  c.validate();
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.latent_channels = 3 * static_cast<int>(c.patch * c.patch);
  c.model.latent_height = c.data.height / static_cast<int>(c.patch);
  c.model.latent_width = c.data.width / static_cast<int>(c.patch);
  c.model.vocab = c.data.vocab;
  return c;
}

void RunConfig::validate() const {
  try {
    data.validate();
    model.validate();
    loss.validate();
    optim.validate();
    sampler.scales.validate();
    for (const auto& p : train::build_schedule(schedule)) p.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (patch == 0 || data.height % static_cast<int>(patch) != 0 || data.width % static_cast<int>(patch) != 0) {
    throw ConfigError("patch must divide the frame height and width");
  }
  if (model.latent_channels != 3 * static_cast<int>(patch * patch) ||
      model.latent_height != data.height / static_cast<int>(patch) ||
      model.latent_width != data.width / static_cast<int>(patch)) {
    throw ConfigError("model latent shape does not match data shape and patch");
  }
  if (model.vocab < data.vocab) throw ConfigError("model vocab is smaller than the data vocab");
  if (model.max_frames < data.frames + 2) throw ConfigError("model max_frames must cover frames plus two subjects");
  if (lora.rank < 1 || policy.rank < 1) throw ConfigError("adapter ranks must be >= 1");
  if (preference_pairs < 1) throw ConfigError("preference_pairs must be >= 1");
  if (sampler.steps < 1) throw ConfigError("sampler.steps must be >= 1");
}

std::string hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(to_json(c).dump())));
  return buf;
}

}  // namespace mvi::config
