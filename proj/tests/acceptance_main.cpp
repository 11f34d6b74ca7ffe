// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion; exits 1 if any fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mvi/config.hpp"
#include "mvi/dataset_io.hpp"
#include "mvi/evalbench.hpp"
#include "mvi/losses.hpp"
#include "mvi/sampler.hpp"
#include "mvi/selftest.hpp"
#include "mvi/trainer.hpp"

using namespace mvi;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr double kSelftestSeconds = 10;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-4;
constexpr double kGradMinMagnitude = 1e-8;
constexpr double kGradPassFraction = 0.99;
constexpr std::size_t kGradMaxParams = 50000;
constexpr double kGradSeconds = 300;
constexpr double kSamplerTol = 1e-6;
constexpr double kDataSeconds = 60;
constexpr double kSmokeMaxParams = 2e6;
constexpr double kSmokeSeconds = 3600;
constexpr std::size_t kLossWindow = 100;
constexpr double kMaxBackgroundMse = 0.02;
constexpr double kMinSuccess = 0.6;
constexpr std::size_t kHeldOutSamples = 16;
constexpr std::size_t kTrainPairs = 64;
constexpr std::size_t kHeldOutPairs = 32;
constexpr int kMarginDraws = 8;
constexpr double kMinPositiveMargin = 0.7;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

void progress(const std::string& msg) { std::fprintf(stderr, "  .. %s\n", msg.c_str()); }

// ---------------------------------------------------------------------------
// 1. Analytic identities.

Verdict identities() {
  const auto t0 = Clock::now();
  const auto checks = selftest::run_all();
  const double s = seconds_since(t0);
  std::string failed;
  for (const auto& c : checks)
    if (!c.passed) failed += " " + c.name;
  Verdict v;
  v.pass = failed.empty() && s < kSelftestSeconds;
  v.detail = std::to_string(checks.size()) + " identities" + (failed.empty() ? "" : ", failed:" + failed) + ", " +
             fmt("%.2fs", s);
  return v;
}

// ---------------------------------------------------------------------------
// 2. Finite differences through the model for both training objectives.

dit::ModelConfig grad_model() {
  dit::ModelConfig c;
  c.width = 16;
  c.depth = 2;
  c.heads = 2;
  c.token_patch = 2;
  c.vocab = 24;
  c.max_frames = 6;
  c.mlp_ratio = 2;
  c.latent_channels = 3;
  c.latent_height = 4;
  c.latent_width = 4;
  return c;
}

template <typename T>
Tensor<T> normal_tensor(Shape s, Rng& rng, double sd = 1.0) {
  Tensor<T> t(std::move(s));
  rng.fill_normal(t, sd);
  return t;
}

void perturb(dit::ModelParams<double>& p, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < p.arrays.size(); ++i)
    for (auto& v : p.arrays.at(i).span()) v += rng.normal() * 0.3;
}

struct FdCount {
  std::size_t checked = 0, passed = 0;
};

FdCount compare_fd(dit::ModelParams<double>& p, const std::set<std::string>& names,
                   const dit::NamedArrays<double>& grads, const std::function<double()>& loss) {
  FdCount c;
  for (const auto& name : names) {
    auto& arr = p.arrays.get(name);
    const auto& g = grads.get(name);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (std::abs(g[i]) <= kGradMinMagnitude) continue;
      const double keep = arr[i];
      arr[i] = keep + kGradStep;
      const double up = loss();
      arr[i] = keep - kGradStep;
      const double down = loss();
      arr[i] = keep;
      const double fd = (up - down) / (2 * kGradStep);
      ++c.checked;
      if (std::abs(fd - g[i]) <= kGradRelTol * std::max(std::abs(fd), std::abs(g[i]))) ++c.passed;
    }
  }
  return c;
}

FdCount combined_loss_fd() {
  const auto cfg = grad_model();
  auto p = dit::attach_lora(dit::init_params<double>(cfg, 31), {2, 4.0, "lora"}, 32);
  perturb(p, 33);
  if (p.arrays.total_elements() > kGradMaxParams) throw Error("gradient-check model too large");
  Rng rng(34);
  cfi::ConditionSet<double> conds;
  conds.source = normal_tensor<double>({3, 3, 4, 4}, rng);
  conds.subjects = normal_tensor<double>({2, 3, 4, 4}, rng);
  conds.prompt = {3, 11, 1, 5};
  const auto z0 = normal_tensor<double>({5, 3, 4, 4}, rng);
  const auto eps = normal_tensor<double>({5, 3, 4, 4}, rng);
  Tensor<double> mask({5, 1, 4, 4});
  for (auto& m : mask.span()) m = rng.uniform() < 0.4 ? 1.0 : rng.uniform();
  const losses::LossWeights w;
  const double t = 0.6;
  const auto packed = [&] { return cfi::pack(losses::flow_interpolate(z0, eps, t), conds, t); };
  auto loss = [&] { return losses::combined_loss(dit::forward(p, packed(), conds.model_tokens()), z0, eps, mask, w); };

  const auto names = dit::trainable_names(p, 1);
  dit::Model<double> model(p);
  dit::ForwardCache<double> cache;
  const auto pred = model.forward(packed(), conds.model_tokens(), &cache);
  Tensor<double> g;
  losses::combined_loss(pred, z0, eps, mask, w, &g);
  auto grads = p.arrays.zeros_like();
  model.backward(cache, g, grads, dit::trainable_flags(p, names));
  return compare_fd(p, names, grads, loss);
}

FdCount ipo_loss_fd() {
  const auto cfg = grad_model();
  auto p = dit::attach_lora(dit::init_params<double>(cfg, 41), {2, 4.0, "lora"}, 42);
  p = dit::attach_lora(p, {2, 4.0, "policy"}, 43);
  perturb(p, 44);
  if (p.arrays.total_elements() > kGradMaxParams) throw Error("gradient-check model too large");
  Rng rng(45);
  cfi::ConditionSet<double> conds;
  conds.source = normal_tensor<double>({3, 3, 4, 4}, rng);
  conds.subjects = normal_tensor<double>({1, 3, 4, 4}, rng);
  conds.prompt = {7, 2, 9};
  const auto yw = normal_tensor<double>({3, 3, 4, 4}, rng, 0.5);
  const auto yl = normal_tensor<double>({3, 3, 4, 4}, rng, 0.5);
  const auto eps = normal_tensor<double>({4, 3, 4, 4}, rng);
  const double t = 0.45;
  // Penalty target at the surrogate's scale.
  losses::LossWeights w;
  w.gamma = 1.0;

  auto ll_of = [&](const Tensor<double>& y, bool policy) {
    return losses::neg_logprob_surrogate(p, conds, y, eps, t, {policy});
  };
  const double lw_ref = ll_of(yw, false), ll_ref = ll_of(yl, false);
  auto loss = [&] { return losses::ipo_terms(ll_of(yw, true), ll_of(yl, true), lw_ref, ll_ref, w).loss; };

  const auto names = dit::trainable_names(p, 4);
  const auto flags = dit::trainable_flags(p, names);
  dit::Model<double> model(p, {true});
  auto grads = p.arrays.zeros_like();
  const auto toks = conds.model_tokens();
  struct Run {
    double l;
    Tensor<double> g;
    dit::ForwardCache<double> cache;
  };
  auto run = [&](const Tensor<double>& y) {
    Run r;
    const auto z0 = concat0(y, conds.subjects);
    const auto pred = model.forward(cfi::pack(losses::flow_interpolate(z0, eps, t), conds, t), toks, &r.cache);
    r.l = losses::surrogate_from_pred(pred, z0, eps, y.dim(0), &r.g);
    return r;
  };
  Run rw = run(yw), rl = run(yl);
  const auto terms = losses::ipo_terms(rw.l, rl.l, lw_ref, ll_ref, w);
  for (auto& v : rw.g.span()) v *= terms.d_lw;
  for (auto& v : rl.g.span()) v *= terms.d_ll;
  model.backward(rw.cache, rw.g, grads, flags);
  model.backward(rl.cache, rl.g, grads, flags);
  return compare_fd(p, names, grads, loss);
}

Verdict gradients() {
  const auto t0 = Clock::now();
  const FdCount a = combined_loss_fd();
  const FdCount b = ipo_loss_fd();
  const double s = seconds_since(t0);
  auto frac = [](const FdCount& c) { return c.checked ? static_cast<double>(c.passed) / c.checked : 0.0; };
  Verdict v;
  v.pass = a.checked > 0 && b.checked > 0 && frac(a) >= kGradPassFraction && frac(b) >= kGradPassFraction &&
           s < kGradSeconds;
  v.detail = "regression " + std::to_string(a.passed) + "/" + std::to_string(a.checked) + ", preference " +
             std::to_string(b.passed) + "/" + std::to_string(b.checked) + " within " + fmt("%.0e", kGradRelTol) + ", " +
             fmt("%.1fs", s);
  return v;
}

// ---------------------------------------------------------------------------
// 3. Sampler against a constant velocity per condition arm.

float arm_velocity(const cfi::PackedInput<float>& in, const std::vector<std::int64_t>& toks, const float c[4]) {
  const bool has_prompt = !(toks.size() == 1 && toks[0] == cfi::kNullToken);
  const std::size_t cl = (in.data.dim(1) - 1) / 2;
  const std::size_t hw = in.data.dim(2) * in.data.dim(3);
  const std::size_t stride = in.data.dim(1) * hw;
  bool has_source = false, has_subjects = false;
  for (std::size_t k = 0; k < in.frames + in.subjects; ++k)
    for (std::size_t i = 0; i < cl * hw; ++i) {
      const bool nz = in.data[k * stride + cl * hw + i] != 0.0f;
      (k < in.frames ? has_source : has_subjects) |= nz;
    }
  if (has_source) return c[3];
  if (has_subjects) return c[2];
  if (has_prompt) return c[1];
  return c[0];
}

Verdict sampler_oracle() {
  const float c[4] = {0.3f, -0.2f, 0.45f, 0.7f};
  double worst = 0;
  for (int steps : {1, 5, 50}) {
    sampler::SampleRequest r;
    Rng rng(static_cast<std::uint64_t>(steps));
    r.conditions.source = normal_tensor<float>({4, 3, 2, 2}, rng);
    r.conditions.subjects = normal_tensor<float>({2, 3, 2, 2}, rng);
    r.conditions.prompt = {4, 5, 6};
    r.steps = steps;
    r.seed = 100 + static_cast<std::uint64_t>(steps);
    const sampler::VelocityFn fn = [&](const cfi::PackedInput<float>& in, const std::vector<std::int64_t>& toks) {
      Array v({in.frames + in.subjects, 3, 2, 2});
      v.fill(arm_velocity(in, toks, c));
      return v;
    };
    const auto res = sampler::euler_sample(fn, r, 1);
    const auto eps = sampler::initial_noise(r);
    const auto& s = r.scales;
    const double vel = c[0] + s.s1 * (c[1] - c[0]) + s.s2 * (c[2] - c[1]) + s.s3 * (c[3] - c[2]);
    for (std::size_t i = 0; i < res.video_latent.size(); ++i) {
      const double want = eps[i] + vel;
      worst = std::max(worst, std::abs(res.video_latent[i] - want) / std::max(1.0, std::abs(want)));
    }
  }
  return {worst <= kSamplerTol, "steps {1,5,50}, worst error " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------
// 4. Data pipeline guarantees on the bench.

std::map<std::string, std::string> file_tree(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    m[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return m;
}

Verdict data_pipeline(const fs::path& work, const toygen::GenConfig& gen) {
  const auto t0 = Clock::now();
  const auto bench = toygen::build_bench(gen);
  std::size_t identity_bad = 0, crop_bad = 0;
  for (const auto& c : bench) {
    const auto& s = c.sample;
    const Mask u = s.union_mask();
    const std::size_t f = s.frames(), ch = s.target_video.dim(1), h = s.target_video.dim(2), w = s.target_video.dim(3);
    for (std::size_t k = 0; k < f; ++k)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          if (u.at4(k, 0, y, x) == 0)
            for (std::size_t q = 0; q < ch; ++q)
              if (std::memcmp(&s.target_video.at4(k, q, y, x), &s.source_video.at4(k, q, y, x), sizeof(float)) != 0)
                ++identity_bad;
    for (const auto& ref : s.reference_images)
      if (toygen::appears_as_crop(ref, s.target_video)) ++crop_bad;
  }
  const fs::path a = work / "bench_a", b = work / "bench_b";
  fs::remove_all(a);
  fs::remove_all(b);
  io::write_bench(a, bench);
  io::write_bench(b, toygen::build_bench(gen));
  const bool same = file_tree(a) == file_tree(b);
  const double s = seconds_since(t0);
  Verdict v;
  v.pass = bench.size() == toygen::kBenchSize && identity_bad == 0 && crop_bad == 0 && same && s < kDataSeconds;
  v.detail = std::to_string(bench.size()) + " cases, " + std::to_string(identity_bad) + " background mismatches, " +
             std::to_string(crop_bad) + " copied references, reruns " + (same ? "identical" : "differ") + ", " +
             fmt("%.1fs", s);
  return v;
}

// ---------------------------------------------------------------------------
// 5-7. Training on the toy configuration.

struct Smoke {
  config::RunConfig cfg;
  std::vector<train::PhaseConfig> plan;
  fs::path work;
};

train::TrainerOptions options_of(const config::RunConfig& cfg, bool sl = true) {
  train::TrainerOptions o;
  o.loss = cfg.loss;
  if (!sl) o.loss.lambda2 = 0.0;
  o.optim = cfg.optim;
  o.policy = cfg.policy;
  o.patch = cfg.patch;
  return o;
}

train::PhaseResult run_generated(train::TrainState& st, const Smoke& sm, int phase, const train::TrainerOptions& o) {
  const auto& pc = sm.plan[static_cast<std::size_t>(phase - 1)];
  auto gen = sm.cfg.data;
  gen.variant_weights = pc.mixture;
  const train::GeneratedSource src(gen);
  return train::run_phase(st, pc, {&src, nullptr}, o);
}

double window_mean(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

struct SmokeOutcome {
  Verdict smoke, ablation, preference;
};

SmokeOutcome smoke_runs(const Smoke& sm) {
  SmokeOutcome out;
  const auto& cfg = sm.cfg;
  const auto held = eval::held_out_samples(cfg.data, kHeldOutSamples);
  const std::uint64_t seeds[3] = {cfg.seed, cfg.seed + 1, cfg.seed + 2};

  // Phase 1 per seed, with and without the subject-focused term.
  std::vector<double> mse_sl, mse_plain;
  int decreasing = 0;
  std::string losses_text;
  train::TrainState main_state;
  double main_seconds = 0;
  std::size_t param_count = 0;
  for (std::uint64_t seed : seeds) {
    const auto t0 = Clock::now();
    auto st = train::fresh_state(cfg.model, cfg.lora, seed);
    param_count = st.params.arrays.total_elements();
    progress("seed " + std::to_string(seed) + ": phase 1");
    const auto r = run_generated(st, sm, 1, options_of(cfg));
    const std::size_t n = r.losses.size(), w = std::min(kLossWindow, n / 2);
    const double lead = window_mean(r.losses, 0, w), trail = window_mean(r.losses, n - w, n);
    if (trail < lead) ++decreasing;
    losses_text += (losses_text.empty() ? "" : " ") + fmt("%.3f", lead) + "->" + fmt("%.3f", trail);
    mse_sl.push_back(eval::subject_region_mse(st.params, held, cfg.seed, cfg.patch));
    if (seed == cfg.seed) {
      main_seconds = seconds_since(t0);
      main_state = std::move(st);
    }
    progress("seed " + std::to_string(seed) + ": phase 1 without the subject-focused term");
    auto plain = train::fresh_state(cfg.model, cfg.lora, seed);
    run_generated(plain, sm, 1, options_of(cfg, false));
    mse_plain.push_back(eval::subject_region_mse(plain.params, held, cfg.seed, cfg.patch));
  }

  // Phases 2-3 on the first seed, then the bench.
  const auto t1 = Clock::now();
  for (int k = 2; k <= 3; ++k) {
    progress("seed " + std::to_string(cfg.seed) + ": phase " + std::to_string(k));
    run_generated(main_state, sm, k, options_of(cfg));
  }
  main_seconds += seconds_since(t1);
  train::save_checkpoint(main_state, sm.work / "phase3.ckpt");
  const auto bench = toygen::build_bench(cfg.data);
  progress("bench: untrained");
  const auto untrained = train::fresh_state(cfg.model, cfg.lora, cfg.seed);
  const auto base = eval::run_bench(untrained.params, bench, cfg.sampler.scales, cfg.sampler.steps, cfg.seed, cfg.patch);
  progress("bench: phase 3");
  const auto rep = eval::run_bench(main_state.params, bench, cfg.sampler.scales, cfg.sampler.steps, cfg.seed, cfg.patch);
  eval::write_report(sm.work / "untrained.jsonl", base);
  eval::write_report(sm.work / "phase3.jsonl", rep);
  const auto s = rep.summary(), s0 = base.summary();

  out.smoke.pass = param_count <= kSmokeMaxParams && decreasing == 3 && s.failed == 0 &&
                   s.background_mse <= kMaxBackgroundMse && s.success_rate >= kMinSuccess && s0.success_rate == 0.0 &&
                   main_seconds <= kSmokeSeconds;
  out.smoke.detail = std::to_string(param_count) + " params; phase-1 loss " + losses_text + " (" +
                     std::to_string(decreasing) + "/3 decrease); bench bg_mse " + fmt("%.4f", s.background_mse) +
                     " success " + fmt("%.3f", s.success_rate) + "; untrained success " + fmt("%.3f", s0.success_rate) +
                     "; phases 1-3 " + fmt("%.0fs", main_seconds);

  const double with_sl = median3(mse_sl), without = median3(mse_plain);
  out.ablation.pass = with_sl < without;
  out.ablation.detail = "median subject-region MSE with " + fmt("%.5f", with_sl) + " vs without " + fmt("%.5f", without) +
                        " over 3 seeds at " + std::to_string(sm.plan[0].steps) + " steps";

  // Phase 4 from the phase-3 state.
  const auto before = main_state.params;
  const auto pairs = toygen::build_preference_set(cfg.data, derive_seed(cfg.seed, {4}), kTrainPairs);
  const auto held_pairs = toygen::build_preference_set(cfg.data, derive_seed(0x686F6C64ULL, {4}), kHeldOutPairs);
  progress("seed " + std::to_string(cfg.seed) + ": phase 4");
  train::run_phase(main_state, sm.plan[3], {nullptr, &pairs}, options_of(cfg));
  train::save_checkpoint(main_state, sm.work / "phase4.ckpt");

  std::size_t changed = 0;
  for (std::size_t i = 0; i < before.arrays.size(); ++i) {
    const auto& name = before.arrays.name(i);
    const auto& a = before.arrays.at(i);
    const auto& b = main_state.params.arrays.get(name);
    if (a.size() != b.size() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) != 0) ++changed;
  }
  std::size_t positive = 0;
  double mean_margin = 0;
  for (std::size_t i = 0; i < held_pairs.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, {0x6D617267ULL, i}));
    double m = 0;
    for (int d = 0; d < kMarginDraws; ++d)
      m += train::ipo_step(main_state.params, held_pairs[i], cfg.loss, rng, cfg.patch, false).terms.margin;
    m /= kMarginDraws;
    mean_margin += m / static_cast<double>(held_pairs.size());
    if (m > 0) ++positive;
  }
  const double frac = static_cast<double>(positive) / static_cast<double>(held_pairs.size());
  out.preference.pass = frac >= kMinPositiveMargin && changed == 0;
  out.preference.detail = std::to_string(positive) + "/" + std::to_string(held_pairs.size()) +
                          " held-out pairs with positive margin (mean " + fmt("%.2e", mean_margin) + "), " +
                          std::to_string(changed) + " base arrays changed";
  return out;
}

// ---------------------------------------------------------------------------
// 8. Phase gating and checkpoint round trip.

Verdict gating_and_resume(const fs::path& work) {
  dit::ModelConfig mc;
  mc.width = 16;
  mc.depth = 1;
  mc.heads = 2;
  mc.token_patch = 2;
  mc.max_frames = 12;
  mc.mlp_ratio = 2;
  train::ScheduleConfig sc;
  sc.steps = {6, 4, 4, 4};
  sc.batch_size = 2;
  const auto plan = train::build_schedule(sc);
  train::TrainerOptions o;
  o.optim.warmup = 2;
  o.policy = {2, 4.0, "policy"};
  const train::GeneratedSource src(toygen::GenConfig{});

  int refused = 0;
  auto refuses = [&](train::TrainState st, int phase) {
    try {
      train::run_phase(st, plan[static_cast<std::size_t>(phase - 1)], {&src, nullptr}, o);
    } catch (const train::PhaseGateError&) {
      ++refused;
    }
  };
  const auto fresh = train::fresh_state(mc, {2, 4.0, "lora"}, 5);
  for (int k = 2; k <= 4; ++k) refuses(fresh, k);
  auto half = fresh;
  train::run_phase(half, plan[0], {&src, nullptr}, o, 3);
  refuses(half, 2);  // phase 1 incomplete

  auto straight = fresh;
  train::run_phase(straight, plan[0], {&src, nullptr}, o);
  train::save_checkpoint(half, work / "half.ckpt");
  auto resumed = train::load_checkpoint(work / "half.ckpt");
  train::run_phase(resumed, plan[0], {&src, nullptr}, o);
  train::save_checkpoint(straight, work / "straight.ckpt");
  train::save_checkpoint(resumed, work / "resumed.ckpt");
  train::save_checkpoint(train::load_checkpoint(work / "straight.ckpt"), work / "again.ckpt");
  const auto files = file_tree(work);
  const bool identical = files.at("straight.ckpt") == files.at("resumed.ckpt");
  const bool stable = files.at("again.ckpt") == files.at("straight.ckpt");

  Verdict v;
  v.pass = refused == 4 && identical && stable;
  v.detail = std::to_string(refused) + "/4 premature phases refused; resumed run " +
             (identical ? "bitwise identical" : "differs") + "; save/load " + (stable ? "stable" : "unstable");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvi acceptance run"};
  std::string work = "acceptance_work", config_path;
  std::vector<int> only;
  app.add_option("--work", work, "Directory for checkpoints and reports");
  app.add_option("--config", config_path, "Toy run configuration")->check(CLI::ExistingFile);
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  std::setvbuf(stdout, nullptr, _IONBF, 0);

  const fs::path dir(work);
  fs::create_directories(dir);
  const auto cfg = config_path.empty() ? config::default_run_config() : config::load(config_path);
  const Smoke sm{cfg, train::build_schedule(cfg.schedule), dir};

  auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
  int failures = 0;
  auto report = [&](int k, const std::string& name, const std::function<Verdict()>& fn, double shared = 0) {
    if (!wanted(k)) return;
    const auto t0 = Clock::now() - std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(shared));
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::printf("%s [%d] %s: %s (%.0fs)\n", v.pass ? "PASS" : "FAIL", k, name.c_str(), v.detail.c_str(),
                seconds_since(t0));
  };

  report(1, "analytic identities", identities);
  report(2, "gradient checks", gradients);
  report(3, "sampler oracle", sampler_oracle);
  report(4, "data pipeline", [&] { return data_pipeline(dir, cfg.data); });
  if (wanted(5) || wanted(6) || wanted(7)) {
    SmokeOutcome so;
    std::string error;
    const auto t0 = Clock::now();
    try {
      so = smoke_runs(sm);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double shared = seconds_since(t0);
    auto pick = [&](const Verdict& v) { return error.empty() ? v : Verdict{false, "exception: " + error}; };
    // One shared training run; each line reports its total time.
    report(5, "smoke training", [&] { return pick(so.smoke); }, shared);
    report(6, "subject-focused loss ablation", [&] { return pick(so.ablation); }, shared);
    report(7, "preference optimization", [&] { return pick(so.preference); }, shared);
  }
  report(8, "phase gating and checkpoint round trip", [&] { return gating_and_resume(dir); });
  return failures == 0 ? 0 : 1;
}
