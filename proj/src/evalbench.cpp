// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/evalbench.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mvi/latent_codec.hpp"
#include "mvi/losses.hpp"
#include "mvi/rng.hpp"
#include "mvi/trainer.hpp"

namespace mvi::eval {
namespace {

using Json = nlohmann::ordered_json;

void check_video(const Array& a, const Array& b, const char* what) {
  if (a.rank() != 4 || a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " must be equal f x c x h x w");
  }
}

Mask union_of(const std::vector<Mask>& masks, const Array& video) {
  if (masks.empty()) throw Error("no subject masks");
  const Shape want{video.dim(0), 1, video.dim(2), video.dim(3)};
  Mask u(want);
  for (const auto& m : masks) {
    if (m.shape() != want) throw ShapeError("mask shape " + shape_str(m.shape()) + " does not match the clip");
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = static_cast<std::uint8_t>(u[i] | (m[i] != 0));
  }
  return u;
}

// Squared error summed over channels at pixel (k, y, x).
double pixel_sq(const Array& a, const Array& b, std::size_t k, std::size_t y, std::size_t x) {
  double s = 0;
  for (std::size_t c = 0; c < a.dim(1); ++c) {
    const double d = static_cast<double>(a.at4(k, c, y, x)) - b.at4(k, c, y, x);
    s += d * d;
  }
  return s;
}

// Largest-fitting component test for one frame.
bool frame_has_component(const Array& gen, std::size_t k, const toygen::Rgb& color, double lo, double hi) {
  const std::size_t h = gen.dim(2), w = gen.dim(3);
  std::vector<std::uint8_t> match(h * w, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      bool ok = true;
      for (std::size_t c = 0; c < 3 && ok; ++c) ok = std::abs(gen.at4(k, c, y, x) - color[c]) <= kColorTolerance;
      match[y * w + x] = ok ? 1 : 0;
    }
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (match[start] != 1) continue;
    std::size_t area = 0;
    stack.push_back(start);
    match[start] = 2;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++area;
      const std::size_t y = p / w, x = p % w;
      auto visit = [&](std::size_t q) {
        if (match[q] == 1) {
          match[q] = 2;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
    }
    if (static_cast<double>(area) >= lo && static_cast<double>(area) <= hi) return true;
  }
  return false;
}

Json record_json(const CaseRecord& r) {
  Json j;
  j["case_id"] = r.case_id;
  if (!r.error.empty()) {
    j["error"] = r.error;
    return j;
  }
  j["subject_consistency"] = r.subject_consistency;
  j["background_mse"] = r.background_mse;
  j["insertion_success"] = r.insertion_success;
  j["temporal_smoothness"] = r.temporal_smoothness;
  return j;
}

Json summary_json(const Summary& s) {
  return Json{{"cases", s.cases},
              {"failed", s.failed},
              {"subject_consistency", s.subject_consistency},
              {"background_mse", s.background_mse},
              {"temporal_smoothness", s.temporal_smoothness},
              {"success_rate", s.success_rate}};
}

}  // namespace

double subject_consistency(const Array& gen, const Array& target, const std::vector<Mask>& masks) {
  check_video(gen, target, "subject_consistency");
  const Mask u = union_of(masks, gen);
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < gen.dim(0); ++k)
    for (std::size_t y = 0; y < gen.dim(2); ++y)
      for (std::size_t x = 0; x < gen.dim(3); ++x) {
        if (!u.at4(k, 0, y, x)) continue;
        sum += pixel_sq(gen, target, k, y, x);
        count += gen.dim(1);
      }
  if (count == 0) throw Error("subject_consistency: empty subject mask");
  return 1.0 - std::clamp(sum / static_cast<double>(count), 0.0, 1.0);
}

double background_preservation(const Array& gen, const Array& source, const std::vector<Mask>& masks) {
  check_video(gen, source, "background_preservation");
  const Mask u = union_of(masks, gen);
  const std::size_t h = gen.dim(2), w = gen.dim(3);
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < gen.dim(0); ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        bool near = false;
        for (std::size_t yy = y > 0 ? y - 1 : 0; yy <= std::min(h - 1, y + 1) && !near; ++yy)
          for (std::size_t xx = x > 0 ? x - 1 : 0; xx <= std::min(w - 1, x + 1) && !near; ++xx)
            near = u.at4(k, 0, yy, xx) != 0;
        if (near) continue;
        sum += pixel_sq(gen, source, k, y, x);
        count += gen.dim(1);
      }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

bool insertion_success(const Array& gen, const toygen::SubjectSpec& subject, const Mask& expected) {
  if (gen.rank() != 4 || gen.dim(1) != 3) throw ShapeError("insertion_success: expected an RGB clip");
  if (expected.rank() != 4 || expected.dim(0) != gen.dim(0) || expected.dim(2) != gen.dim(2) ||
      expected.dim(3) != gen.dim(3)) {
    throw ShapeError("insertion_success: mask " + shape_str(expected.shape()) + " does not match the clip");
  }
  std::size_t frames = 0, hits = 0;
  const std::size_t hw = gen.dim(2) * gen.dim(3);
  for (std::size_t k = 0; k < gen.dim(0); ++k) {
    std::size_t area = 0;
    for (std::size_t i = 0; i < hw; ++i) area += expected[k * hw + i] != 0;
    if (area == 0) continue;
    ++frames;
    if (frame_has_component(gen, k, subject.color, kMinAreaRatio * area, kMaxAreaRatio * area)) ++hits;
  }
  return frames > 0 && static_cast<double>(hits) >= kMinFrameFraction * static_cast<double>(frames);
}

double temporal_smoothness(const Array& gen) {
  if (gen.rank() != 4 || gen.dim(0) < 2) throw Error("temporal_smoothness: need at least two frames");
  const std::size_t fs = gen.stride0();
  double sum = 0;
  for (std::size_t k = 0; k + 1 < gen.dim(0); ++k)
    for (std::size_t i = 0; i < fs; ++i) sum += std::abs(static_cast<double>(gen[(k + 1) * fs + i]) - gen[k * fs + i]);
  return sum / static_cast<double>((gen.dim(0) - 1) * fs);
}

Summary EvalReport::summary() const {
  Summary s;
  s.cases = cases.size();
  std::size_t ok = 0, subjects = 0, successes = 0;
  for (const auto& c : cases) {
    if (!c.error.empty()) {
      ++s.failed;
      continue;
    }
    ++ok;
    s.subject_consistency += c.subject_consistency;
    s.background_mse += c.background_mse;
    s.temporal_smoothness += c.temporal_smoothness;
    for (int v : c.insertion_success) {
      ++subjects;
      successes += v != 0;
    }
  }
  if (ok > 0) {
    s.subject_consistency /= static_cast<double>(ok);
    s.background_mse /= static_cast<double>(ok);
    s.temporal_smoothness /= static_cast<double>(ok);
  }
  s.success_rate = subjects == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(subjects);
  return s;
}

std::string EvalReport::to_jsonl() const {
  std::string out;
  for (const auto& c : cases) out += record_json(c).dump() + "\n";
  out += Json{{"summary", summary_json(summary())}}.dump() + "\n";
  return out;
}

EvalReport EvalReport::from_jsonl(const std::string& text) {
  EvalReport r;
  std::istringstream in(text);
  std::string line;
  bool saw_summary = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
      if (j.contains("summary")) {
        saw_summary = true;
        continue;
      }
      CaseRecord c;
      c.case_id = j.at("case_id").get<std::string>();
      if (j.contains("error")) {
        c.error = j.at("error").get<std::string>();
      } else {
        c.subject_consistency = j.at("subject_consistency").get<double>();
        c.background_mse = j.at("background_mse").get<double>();
        c.insertion_success = j.at("insertion_success").get<std::vector<int>>();
        c.temporal_smoothness = j.at("temporal_smoothness").get<double>();
      }
      r.cases.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("malformed report line: ") + e.what());
    }
  }
  if (!saw_summary) throw Error("report has no summary line");
  return r;
}

CaseRecord evaluate_case(const toygen::EvalCase& c, const Array& gen) {
  CaseRecord r;
  r.case_id = c.case_id;
  const auto& s = c.sample;
  r.subject_consistency = subject_consistency(gen, s.target_video, s.subject_masks);
  r.background_mse = background_preservation(gen, s.source_video, s.subject_masks);
  for (std::size_t m = 0; m < s.num_subjects(); ++m) {
    r.insertion_success.push_back(insertion_success(gen, s.subjects[m].subject, s.subject_masks[m]) ? 1 : 0);
  }
  r.temporal_smoothness = temporal_smoothness(gen);
  return r;
}

EvalReport evaluate(const std::vector<toygen::EvalCase>& bench, const std::vector<sampler::CaseOutput>& outputs) {
  if (bench.size() != outputs.size()) throw Error("evaluate: bench and outputs differ in length");
  EvalReport rep;
  for (std::size_t i = 0; i < bench.size(); ++i) {
    if (outputs[i].case_id != bench[i].case_id) throw Error("evaluate: case order mismatch at " + bench[i].case_id);
    if (!outputs[i].result) {
      CaseRecord r;
      r.case_id = bench[i].case_id;
      r.error = outputs[i].error.empty() ? "no output" : outputs[i].error;
      rep.cases.push_back(std::move(r));
      continue;
    }
    rep.cases.push_back(evaluate_case(bench[i], sampler::clamp_unit(outputs[i].result->video)));
  }
  return rep;
}

EvalReport evaluate_targets(const std::vector<toygen::EvalCase>& bench) {
  EvalReport rep;
  for (const auto& c : bench) rep.cases.push_back(evaluate_case(c, c.sample.target_video));
  return rep;
}

EvalReport run_bench(const dit::Parameters& params, const std::vector<toygen::EvalCase>& bench,
                     const sampler::GuidanceScales& scales, int steps, std::uint64_t seed, std::size_t patch) {
  return evaluate(bench, sampler::batch_infer(params, bench, scales, steps, seed, patch));
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write report " + path.string());
  out << report.to_jsonl();
  if (!out) throw Error("failed writing report " + path.string());
}

double subject_region_mse(const dit::Parameters& params, const std::vector<toygen::ToySample>& samples,
                          std::uint64_t seed, std::size_t patch) {
  const dit::Model<float> model(params);
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto conds = train::conditions_of(s, patch);
    const Array z0 = concat0(codec::encode(s.target_video, patch).data, conds.subjects);
    const Mask u = s.union_mask();
    for (const double t : {0.25, 0.5, 0.75}) {
      Rng rng(derive_seed(seed, {i, static_cast<std::uint64_t>(t * 100)}));
      Array eps(z0.shape());
      rng.fill_normal(eps);
      const Array zt = losses::flow_interpolate(z0, eps, t);
      const Array v = model.forward(cfi::pack(zt, conds, t), conds.model_tokens());
      const std::size_t f = s.frames();
      Array est = slice0(zt, 0, f);
      const Array vv = slice0(v, 0, f);
      for (std::size_t k = 0; k < est.size(); ++k) est[k] += static_cast<float>(t) * vv[k];
      const Array video = codec::decode(codec::Latent<float>{est, patch});
      for (std::size_t k = 0; k < f; ++k)
        for (std::size_t y = 0; y < video.dim(2); ++y)
          for (std::size_t x = 0; x < video.dim(3); ++x) {
            if (!u.at4(k, 0, y, x)) continue;
            sum += pixel_sq(video, s.target_video, k, y, x);
            count += video.dim(1);
          }
    }
  }
  if (count == 0) throw Error("subject_region_mse: no subject pixels");
  return sum / static_cast<double>(count);
}

std::vector<toygen::ToySample> held_out_samples(const toygen::GenConfig& config, std::size_t count) {
  std::vector<toygen::ToySample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(toygen::build_sample(config, derive_seed(0x686F6C64ULL, {i})));
  return out;
}

std::vector<AblationRow> run_ablation(const config::RunConfig& cfg, const AblationOptions& opt,
                                      const std::function<void(const std::string&)>& progress) {
  const auto plan = train::build_schedule(cfg.schedule);
  const auto bench = toygen::build_bench(cfg.data);
  const auto held = held_out_samples(cfg.data, opt.held_out);

  auto finish = [&](const std::string& name, const train::TrainState& st) {
    if (progress) progress(name + ": evaluating");
    AblationRow row;
    row.name = name;
    row.summary = run_bench(st.params, bench, cfg.sampler.scales, opt.sample_steps, cfg.seed, cfg.patch).summary();
    row.subject_region_mse = subject_region_mse(st.params, held, cfg.seed, cfg.patch);
    return row;
  };
  auto options_for = [&](bool sl) {
    train::TrainerOptions o;
    o.loss = cfg.loss;
    if (!sl) o.loss.lambda2 = 0.0;
    o.optim = cfg.optim;
    o.policy = cfg.policy;
    o.patch = cfg.patch;
    return o;
  };
  auto staged = [&](const std::string& name, bool sl) {
    auto st = train::fresh_state(cfg.model, cfg.lora, cfg.seed);
    const auto o = options_for(sl);
    for (int k = 0; k < 3; ++k) {
      if (progress) progress(name + ": phase " + std::to_string(k + 1));
      auto gen = cfg.data;
      gen.variant_weights = plan[static_cast<std::size_t>(k)].mixture;
      const train::GeneratedSource src(gen);
      train::run_phase(st, plan[static_cast<std::size_t>(k)], {&src, nullptr}, o);
    }
    return finish(name, st);
  };

  std::vector<AblationRow> rows;
  rows.push_back(staged("full", true));
  if (opt.no_sl) rows.push_back(staged("w/o SL", false));
  if (opt.single_stage) {
    // One full-task stage with the combined step budget of phases 1-3.
    auto st = train::fresh_state(cfg.model, cfg.lora, cfg.seed);
    train::PhaseConfig one = plan[1];
    one.steps = plan[0].steps + plan[1].steps + plan[2].steps;
    st.phase = 1;  // phases 1 and 3 are skipped, not trained
    if (progress) progress("w/o PT: single stage");
    auto gen = cfg.data;
    gen.variant_weights = one.mixture;
    const train::GeneratedSource src(gen);
    train::run_phase(st, one, {&src, nullptr}, options_for(true));
    rows.push_back(finish("w/o PT", st));
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s %10s %10s %10s %10s %12s\n", "variant", "subj_cons", "bg_mse", "success",
                "smooth", "subj_mse");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %10.4f %10.5f %10.3f %10.4f %12.5f\n", r.name.c_str(),
                  r.summary.subject_consistency, r.summary.background_mse, r.summary.success_rate,
                  r.summary.temporal_smoothness, r.subject_region_mse);
    out << buf;
  }
  return out.str();
}

}  // namespace mvi::eval
