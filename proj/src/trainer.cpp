// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "mvi/config.hpp"
#include "mvi/latent_codec.hpp"
#include "mvi/oitf.hpp"
#include "mvi/simd.hpp"

namespace mvi::train {
namespace {

using Json = nlohmann::ordered_json;

constexpr const char* kCheckpointFormat = "mvi-checkpoint";
constexpr int kCheckpointVersion = 1;

void check_mixture(const std::array<double, toygen::kNumVariants>& m, const char* what) {
  double total = 0;
  for (double v : m) {
    if (!(v >= 0) || !std::isfinite(v)) throw Error(std::string(what) + ": weights must be finite and >= 0");
    total += v;
  }
  if (total <= 0) throw Error(std::string(what) + ": weights sum to zero");
}

dit::NamedArrays<float> zeros_for(const dit::Parameters& p, const std::set<std::string>& names) {
  dit::NamedArrays<float> out;
  for (const auto& n : p.arrays.names())
    if (names.count(n)) out.add(n, Tensor<float>(p.arrays.get(n).shape()));
  return out;
}

Json metric_json(const MetricRecord& r) {
  return Json{{"step", r.step}, {"phase", r.phase}, {"loss", r.loss}, {"combo", r.combo}, {"wall_ms", r.wall_ms}};
}

MetricRecord metric_from(const Json& j) {
  MetricRecord r;
  r.step = j.at("step").get<std::int64_t>();
  r.phase = j.at("phase").get<int>();
  r.loss = j.at("loss").get<double>();
  r.combo = j.at("combo").get<std::string>();
  r.wall_ms = j.at("wall_ms").get<double>();
  return r;
}

// Moves `state` into `config.phase`, enforcing phase order.
void enter_phase(TrainState& state, const PhaseConfig& config, const TrainerOptions& options) {
  if (state.phase == config.phase && !state.complete) return;
  if (state.phase != config.phase - 1 || !state.complete) {
    std::ostringstream msg;
    msg << "phase " << config.phase << " requires a completed phase-" << (config.phase - 1)
        << " checkpoint; got phase " << state.phase << (state.complete ? " (complete)" : " (incomplete)");
    throw PhaseGateError(msg.str());
  }
  if (config.phase == 4 && !state.params.has_adapter(options.policy.slot)) {
    dit::LoraConfig pol = options.policy;
    pol.slot = "policy";
    state.params = dit::attach_lora(std::move(state.params), pol, derive_seed(state.seed, {4, hash_string("policy")}));
  }
  const auto names = dit::trainable_names(state.params, config.phase);
  state.adam_m = zeros_for(state.params, names);
  state.adam_v = zeros_for(state.params, names);
  state.phase = config.phase;
  state.step = 0;
  state.complete = false;
}

}  // namespace

void ComboDistribution::validate() const {
  double total = 0;
  for (double p : probs) {
    if (!(p >= 0) || !std::isfinite(p)) throw Error("ComboDistribution: probabilities must be finite and >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("ComboDistribution: probabilities must sum to 1");
}

cfi::Combo sample_combo(Rng& rng, const ComboDistribution& dist, int phase) {
  const double u = rng.uniform();
  double acc = 0;
  cfi::Combo c = cfi::Combo::kAll;
  for (std::size_t i = 0; i < dist.probs.size(); ++i) {
    acc += dist.probs[i];
    if (u < acc) {
      c = cfi::kAllCombos[i];
      break;
    }
  }
  // Falling through (rounding) selects the last arm with positive mass.
  if (u >= acc) {
    for (std::size_t i = dist.probs.size(); i-- > 0;) {
      if (dist.probs[i] > 0) {
        c = cfi::kAllCombos[i];
        break;
      }
    }
  }
  if (phase == 1 && c == cfi::Combo::kAll) c = cfi::Combo::kPromptSubject;
  return c;
}

void PhaseConfig::validate() const {
  if (phase < 1 || phase > kNumPhases) throw Error("PhaseConfig: phase must be in 1..4");
  if (steps <= 0) throw Error("PhaseConfig: steps must be > 0");
  if (batch_size <= 0) throw Error("PhaseConfig: batch_size must be > 0");
  if (!(lr > 0) || !std::isfinite(lr)) throw Error("PhaseConfig: lr must be positive");
  if (dataset != "mixed" && dataset != "curated" && dataset != "preference") {
    throw Error("PhaseConfig: unknown dataset selector '" + dataset + "'");
  }
  if ((phase == 4) != (dataset == "preference")) {
    throw Error("PhaseConfig: the preference dataset is used by phase 4 and only by phase 4");
  }
  check_mixture(mixture, "PhaseConfig.mixture");
  combos.validate();
}

std::vector<PhaseConfig> build_schedule(const ScheduleConfig& sc) {
  check_mixture(sc.mixture, "ScheduleConfig.mixture");
  check_mixture(sc.curated_mixture, "ScheduleConfig.curated_mixture");
  sc.combos.validate();
  std::vector<PhaseConfig> plan;
  for (int k = 1; k <= kNumPhases; ++k) {
    PhaseConfig p;
    p.phase = k;
    p.steps = sc.steps[static_cast<std::size_t>(k - 1)];
    p.batch_size = sc.batch_size;
    p.lr = sc.lr;
    p.combos = sc.combos;
    p.mixture = sc.mixture;
    p.dataset = "mixed";
    if (k == 3) {
      p.dataset = "curated";
      p.mixture = sc.curated_mixture;
    } else if (k == 4) {
      p.dataset = "preference";
    }
    p.validate();
    plan.push_back(p);
  }
  return plan;
}

void OptimizerConfig::validate() const {
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw Error("optimizer betas must lie in [0, 1)");
  if (!(eps > 0)) throw Error("optimizer eps must be positive");
  if (!(weight_decay >= 0)) throw Error("optimizer weight_decay must be >= 0");
  if (warmup < 0) throw Error("optimizer warmup must be >= 0");
  if (!(grad_clip >= 0)) throw Error("optimizer grad_clip must be >= 0");
}

double lr_at(double base_lr, int step, int total, int warmup) {
  if (warmup > 0 && step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = std::max(1, total - warmup);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

bool decays(const std::string& name, const Shape& shape) {
  if (shape.size() < 2) return false;
  return name.rfind("pos.", 0) != 0 && name != "prompt.embedding";
}

std::string to_json_line(const MetricRecord& r) { return metric_json(r).dump(); }

TrainState fresh_state(const dit::ModelConfig& model, const dit::LoraConfig& lora, std::uint64_t seed) {
  model.validate();
  TrainState s;
  s.seed = seed;
  dit::LoraConfig lc = lora;
  lc.slot = "lora";
  s.params = dit::attach_lora(dit::init_params<float>(model, derive_seed(seed, {0})), lc, derive_seed(seed, {1}));
  return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  oitf::Container c;
  Json meta;
  meta["format"] = kCheckpointFormat;
  meta["version"] = kCheckpointVersion;
  meta["model"] = config::to_json(state.params.config);
  meta["init_seed"] = state.params.init_seed;
  Json ads = Json::array();
  for (const auto& a : state.params.adapters) ads.push_back({{"slot", a.slot}, {"rank", a.rank}, {"alpha", a.alpha}});
  meta["adapters"] = ads;
  meta["seed"] = state.seed;
  meta["phase"] = state.phase;
  meta["step"] = state.step;
  meta["complete"] = state.complete;
  Json ms = Json::array();
  // Wall times are dropped so equal runs write equal bytes.
  for (auto r : state.metrics) {
    r.wall_ms = 0;
    ms.push_back(metric_json(r));
  }
  meta["metrics"] = ms;
  c.add_text("meta", meta.dump());
  for (std::size_t i = 0; i < state.params.arrays.size(); ++i)
    c.add("param/" + state.params.arrays.name(i), state.params.arrays.at(i));
  for (std::size_t i = 0; i < state.adam_m.size(); ++i) {
    c.add("adam_m/" + state.adam_m.name(i), state.adam_m.at(i));
    c.add("adam_v/" + state.adam_v.name(i), state.adam_v.at(i));
  }
  oitf::write_container(path, c);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const oitf::Container c = oitf::read_container(path);
  if (!c.has("meta")) throw Error(path.string() + ": not a checkpoint (no meta entry)");
  Json meta;
  try {
    meta = Json::parse(c.text("meta"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": corrupt checkpoint metadata: " + e.what());
  }
  if (meta.value("format", "") != kCheckpointFormat || meta.value("version", 0) != kCheckpointVersion) {
    throw Error(path.string() + ": unsupported checkpoint format");
  }
  TrainState s;
  try {
    s.params.config = config::model_from_json(meta.at("model"));
    s.params.init_seed = meta.at("init_seed").get<std::uint64_t>();
    for (const auto& a : meta.at("adapters"))
      s.params.adapters.push_back({a.at("slot").get<std::string>(), a.at("rank").get<int>(), a.at("alpha").get<double>()});
    s.seed = meta.at("seed").get<std::uint64_t>();
    s.phase = meta.at("phase").get<int>();
    s.step = meta.at("step").get<std::int64_t>();
    s.complete = meta.at("complete").get<bool>();
    for (const auto& r : meta.at("metrics")) s.metrics.push_back(metric_from(r));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": corrupt checkpoint metadata: " + e.what());
  }
  for (const auto& e : c.entries()) {
    const std::string& n = e.name;
    if (n.rfind("param/", 0) == 0) {
      s.params.arrays.add(n.substr(6), c.get<float>(n));
    } else if (n.rfind("adam_m/", 0) == 0) {
      s.adam_m.add(n.substr(7), c.get<float>(n));
    } else if (n.rfind("adam_v/", 0) == 0) {
      s.adam_v.add(n.substr(7), c.get<float>(n));
    }
  }
  s.params.config.validate();
  // Round-trip the structure through a fresh model to catch missing arrays.
  const auto expect = dit::init_params<float>(s.params.config, 0);
  for (const auto& n : expect.arrays.names())
    if (!s.params.arrays.has(n)) throw Error(path.string() + ": checkpoint lacks array '" + n + "'");
  for (const auto& a : s.params.adapters) {
    for (const auto& t : dit::adapter_targets(s.params.config)) {
      if (!s.params.arrays.has(t + "." + a.slot + "_a") || !s.params.arrays.has(t + "." + a.slot + "_b"))
        throw Error(path.string() + ": checkpoint lacks adapter arrays for slot '" + a.slot + "'");
    }
  }
  return s;
}

GeneratedSource::GeneratedSource(toygen::GenConfig config) : config_(std::move(config)) { config_.validate(); }

toygen::ToySample GeneratedSource::get(std::uint64_t key) const { return toygen::build_sample(config_, key); }

FixedSource::FixedSource(std::vector<toygen::ToySample> samples) : samples_(std::move(samples)) {
  if (samples_.empty()) throw Error("FixedSource: no samples");
}

toygen::ToySample FixedSource::get(std::uint64_t key) const { return samples_[key % samples_.size()]; }

std::vector<toygen::ToySample> select_variants(std::vector<toygen::ToySample> samples,
                                               const std::array<double, toygen::kNumVariants>& mixture) {
  std::vector<toygen::ToySample> out;
  for (auto& s : samples)
    if (mixture.at(static_cast<std::size_t>(s.variant)) > 0) out.push_back(std::move(s));
  return out;
}

cfi::ConditionSet<float> conditions_of(const toygen::ToySample& sample, std::size_t patch) {
  cfi::ConditionSet<float> c;
  c.prompt = sample.prompt_tokens;
  c.source = codec::encode(sample.source_video, patch).data;
  std::vector<Array> refs;
  for (const auto& r : sample.reference_images) refs.push_back(codec::encode_image(r, patch));
  c.subjects = refs.front();
  for (std::size_t i = 1; i < refs.size(); ++i) c.subjects = concat0(c.subjects, refs[i]);
  return c;
}

SampleBatchItem make_item(const toygen::ToySample& sample, cfi::Combo combo, Rng& rng, std::size_t patch) {
  SampleBatchItem it;
  const auto full = conditions_of(sample, patch);
  it.z0 = concat0(codec::encode(sample.target_video, patch).data, full.subjects);
  it.conditions = cfi::apply_combo(full, combo);
  it.t = rng.uniform();
  it.eps = Array(it.z0.shape());
  rng.fill_normal(it.eps);
  it.mask = losses::downsample_mask<float>(sample.subject_masks, patch, sample.num_subjects());
  return it;
}

double item_loss(const dit::Model<float>& model, const SampleBatchItem& item, const losses::LossWeights& w,
                 dit::NamedArrays<float>* grads, const std::vector<bool>* trainable, float grad_scale) {
  const auto zt = losses::flow_interpolate(item.z0, item.eps, item.t);
  const auto packed = cfi::pack(zt, item.conditions, item.t);
  const auto toks = item.conditions.model_tokens();
  if (!grads) {
    const auto pred = model.forward(packed, toks);
    return losses::combined_loss(pred, item.z0, item.eps, item.mask, w);
  }
  dit::ForwardCache<float> cache;
  const auto pred = model.forward(packed, toks, &cache);
  Array g;
  const double loss = losses::combined_loss(pred, item.z0, item.eps, item.mask, w, &g);
  if (std::isfinite(loss)) {
    for (auto& v : g.span()) v *= grad_scale;
    model.backward(cache, g, *grads, *trainable);
  }
  return loss;
}

IpoStep ipo_step(const dit::Parameters& params, const toygen::PreferencePair& pair, const losses::LossWeights& w,
                 Rng& rng, std::size_t patch, bool with_grads) {
  const auto conds = conditions_of(pair.sample, patch);
  const Array yw = codec::encode(pair.y_w, patch).data;
  const Array yl = codec::encode(pair.y_l, patch).data;
  const std::size_t f = yw.dim(0);
  const double t = rng.uniform();
  Array eps(concat0(yw, conds.subjects).shape());
  rng.fill_normal(eps);

  dit::Model<float> policy(params, {true});
  dit::Model<float> ref(params, {false});
  const auto toks = conds.model_tokens();

  struct Eval {
    double l = 0;
    Array grad;
    dit::ForwardCache<float> cache;
  };
  auto run = [&](const dit::Model<float>& m, const Array& y, bool keep) {
    Eval e;
    const Array z0 = concat0(y, conds.subjects);
    const auto packed = cfi::pack(losses::flow_interpolate(z0, eps, t), conds, t);
    const Array pred = m.forward(packed, toks, keep ? &e.cache : nullptr);
    e.l = losses::surrogate_from_pred(pred, z0, eps, f, keep ? &e.grad : nullptr);
    return e;
  };

  IpoStep out;
  Eval w_pol = run(policy, yw, with_grads);
  Eval l_pol = run(policy, yl, with_grads);
  out.lw = w_pol.l;
  out.ll = l_pol.l;
  out.lw_ref = run(ref, yw, false).l;
  out.ll_ref = run(ref, yl, false).l;
  out.terms = losses::ipo_terms(out.lw, out.ll, out.lw_ref, out.ll_ref, w);
  out.grads = params.arrays.zeros_like();
  if (with_grads) {
    const auto names = dit::trainable_names(params, 4);
    const auto flags = dit::trainable_flags(params, names);
    for (auto& v : w_pol.grad.span()) v *= static_cast<float>(out.terms.d_lw);
    for (auto& v : l_pol.grad.span()) v *= static_cast<float>(out.terms.d_ll);
    policy.backward(w_pol.cache, w_pol.grad, out.grads, flags);
    policy.backward(l_pol.cache, l_pol.grad, out.grads, flags);
  }
  return out;
}

PhaseResult run_phase(TrainState& state, const PhaseConfig& config, const PhaseData& data,
                      const TrainerOptions& options, std::optional<int> max_steps) {
  config.validate();
  options.optim.validate();
  options.loss.validate();
  if (config.phase == 4 && (data.pairs == nullptr || data.pairs->empty())) {
    throw PhaseGateError("phase 4 requires a preference dataset");
  }
  if (config.phase < 4 && data.samples == nullptr) throw Error("phases 1-3 require a sample source");
  enter_phase(state, config, options);

  const auto names = dit::trainable_names(state.params, config.phase);
  const auto flags = dit::trainable_flags(state.params, names);
  std::vector<std::size_t> trained;  // indices into params of the moment arrays
  for (std::size_t i = 0; i < state.adam_m.size(); ++i) trained.push_back(state.params.arrays.index_of(state.adam_m.name(i)));
  if (trained.size() != names.size()) throw Error("optimizer state does not match the phase's trainable arrays");

  std::ofstream log;
  if (!options.metrics_log.empty()) {
    log.open(options.metrics_log, std::ios::app);
    if (!log) throw Error("cannot open metrics log " + options.metrics_log.string());
  }

  PhaseResult result;
  const dit::Model<float> model(state.params, {true});
  auto grads = state.params.arrays.zeros_like();
  const float inv_b = 1.0f / static_cast<float>(config.batch_size);
  int run = 0;
  while (state.step < config.steps && (!max_steps || run < *max_steps)) {
    const auto t0 = std::chrono::steady_clock::now();
    grads.set_zero();
    const auto step = state.step;
    double loss_sum = 0;
    std::string combos;
    for (int slot = 0; slot < config.batch_size; ++slot) {
      const std::uint64_t key = derive_seed(state.seed, {static_cast<std::uint64_t>(config.phase),
                                                         static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(slot)});
      Rng rng(derive_seed(key, {2}));
      double loss = 0;
      if (config.phase == 4) {
        const auto& pair = (*data.pairs)[derive_seed(key, {1}) % data.pairs->size()];
        auto r = ipo_step(state.params, pair, options.loss, rng, options.patch);
        loss = r.terms.loss;
        if (std::isfinite(loss)) {
          for (std::size_t i : trained) simd::axpy(grads.at(i).size(), inv_b, r.grads.at(i).data(), grads.at(i).data());
        }
        if (!combos.empty()) combos += ',';
        combos += cfi::to_string(cfi::Combo::kAll);
      } else {
        const auto sample = data.samples->get(derive_seed(key, {1}));
        const cfi::Combo combo = sample_combo(rng, config.combos, config.phase);
        const auto item = make_item(sample, combo, rng, options.patch);
        if (item.z0.dim(0) > static_cast<std::size_t>(state.params.config.max_frames) ||
            item.z0.dim(1) != static_cast<std::size_t>(state.params.config.latent_channels) ||
            item.z0.dim(2) != static_cast<std::size_t>(state.params.config.latent_height) ||
            item.z0.dim(3) != static_cast<std::size_t>(state.params.config.latent_width)) {
          throw ShapeError("sample latent " + shape_str(item.z0.shape()) + " does not fit the model configuration");
        }
        loss = item_loss(model, item, options.loss, &grads, &flags, inv_b);
        if (!combos.empty()) combos += ',';
        combos += cfi::to_string(combo);
      }
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at phase " << config.phase << " step " << step << " slot " << slot;
        throw TrainingError(msg.str());
      }
      loss_sum += loss;
    }

    // Clip, then AdamW on the trainable arrays.
    double norm_sq = 0;
    for (std::size_t i : trained) {
      const auto& g = grads.at(i);
      for (std::size_t k = 0; k < g.size(); ++k) norm_sq += static_cast<double>(g[k]) * g[k];
    }
    if (!std::isfinite(norm_sq)) {
      std::ostringstream msg;
      msg << "non-finite gradient at phase " << config.phase << " step " << step;
      throw TrainingError(msg.str());
    }
    const double norm = std::sqrt(norm_sq);
    const double clip = options.optim.grad_clip > 0 && norm > options.optim.grad_clip ? options.optim.grad_clip / norm : 1.0;
    const double lr = lr_at(config.lr, static_cast<int>(step), config.steps, options.optim.warmup);
    const double b1 = options.optim.beta1, b2 = options.optim.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
    for (std::size_t j = 0; j < trained.size(); ++j) {
      auto& p = state.params.arrays.at(trained[j]);
      const auto& g = grads.at(trained[j]);
      auto& m = state.adam_m.at(j);
      auto& v = state.adam_v.at(j);
      const double wd = decays(state.adam_m.name(j), p.shape()) ? options.optim.weight_decay : 0.0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = static_cast<double>(g[k]) * clip;
        const double mk = b1 * m[k] + (1 - b1) * gk;
        const double vk = b2 * v[k] + (1 - b2) * gk * gk;
        m[k] = static_cast<float>(mk);
        v[k] = static_cast<float>(vk);
        const double upd = (static_cast<double>(m[k]) / c1) / (std::sqrt(static_cast<double>(v[k]) / c2) + options.optim.eps);
        p[k] = static_cast<float>(static_cast<double>(p[k]) - lr * (upd + wd * static_cast<double>(p[k])));
      }
    }

    state.step = step + 1;
    if (state.step == config.steps) state.complete = true;
    MetricRecord rec;
    rec.step = step;
    rec.phase = config.phase;
    rec.loss = loss_sum / config.batch_size;
    rec.combo = combos;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.losses.push_back(rec.loss);
    state.metrics.push_back(rec);
    if (state.metrics.size() > kMetricsCapacity) state.metrics.erase(state.metrics.begin());
    if (log) log << to_json_line(rec) << '\n' << std::flush;
    if (options.on_step) options.on_step(rec);
    if (options.checkpoint_every > 0 && !options.checkpoint_path.empty() && state.step % options.checkpoint_every == 0) {
      save_checkpoint(state, options.checkpoint_path);
    }
    ++run;
  }
  return result;
}

}  // namespace mvi::train
