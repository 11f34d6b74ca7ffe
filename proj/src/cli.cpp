// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "mvi/config.hpp"
#include "mvi/dataset_io.hpp"
#include "mvi/evalbench.hpp"
#include "mvi/rng.hpp"
#include "mvi/sampler.hpp"
#include "mvi/selftest.hpp"
#include "mvi/simd.hpp"
#include "mvi/trainer.hpp"

#ifndef MVI_BUILD_ID
#define MVI_BUILD_ID "unknown"
#endif

namespace mvi::cli {
namespace fs = std::filesystem;
using config::Json;

namespace {

// Bad flag values discovered after parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;

  void add_to(CLI::App& app, bool out_required = true) {
    app.add_option("--seed", seed, "Global seed (overrides the config)");
    auto* o = app.add_option("--out", out, "Output path");
    if (out_required) o->required();
    app.add_option("--config", config, "RunConfig JSON file")->check(CLI::ExistingFile);
  }

  config::RunConfig load() const {
    config::RunConfig c = config.empty() ? config::default_run_config() : config::load(config);
    if (seed) c.seed = *seed;
    return c;
  }
};

void write_manifest(const fs::path& output, bool is_dir, const std::string& command,
                    const std::vector<std::string>& args, const config::RunConfig& cfg, const Json& seeds) {
  const Json m{{"command", command},
               {"args", args},
               {"config_hash", config::hash(cfg)},
               {"config", config::to_json(cfg)},
               {"seeds", seeds},
               {"build", build_id()},
               {"isa", simd::isa_name(simd::active_isa())}};
  const fs::path p = manifest_path(output, is_dir);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + p.string());
  f << m.dump(2) << '\n';
}

train::TrainerOptions trainer_options(const config::RunConfig& cfg) {
  train::TrainerOptions o;
  o.loss = cfg.loss;
  o.optim = cfg.optim;
  o.policy = cfg.policy;
  o.patch = cfg.patch;
  return o;
}

std::vector<toygen::EvalCase> bench_from(const std::string& dir, const config::RunConfig& cfg) {
  return dir.empty() ? toygen::build_bench(cfg.data) : io::read_bench(dir);
}

sampler::GuidanceScales scales_from(const std::string& text, const config::RunConfig& cfg) {
  if (text.empty()) return cfg.sampler.scales;
  try {
    return sampler::parse_scales(text);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

}  // namespace

std::string build_id() { return std::string(MVI_BUILD_ID) + " " + __VERSION__; }

fs::path manifest_path(const fs::path& output, bool is_directory) {
  if (is_directory) return output / "manifest.json";
  fs::path p = output;
  p += ".manifest.json";
  return p;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Toy mask-free video insertion: data generation, training, sampling and evaluation", "mvi"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // gen-data
  Common gd;
  std::size_t gd_count = 256;
  auto* gen_data = app.add_subcommand("gen-data", "Generate training samples");
  gd.add_to(*gen_data);
  gen_data->add_option("--count", gd_count, "Number of samples")->check(CLI::PositiveNumber);

  // gen-bench
  Common gb;
  auto* gen_bench = app.add_subcommand("gen-bench", "Write the 24-case evaluation suite");
  gb.add_to(*gen_bench);

  // gen-prefs
  Common gp;
  std::size_t gp_count = 64;
  auto* gen_prefs = app.add_subcommand("gen-prefs", "Generate preference pairs");
  gp.add_to(*gen_prefs);
  gen_prefs->add_option("--count", gp_count, "Number of pairs")->check(CLI::PositiveNumber);

  // train
  Common tr;
  int tr_phase = 0;
  std::string tr_data, tr_init, tr_log;
  std::optional<int> tr_max_steps;
  int tr_ckpt_every = 0;
  auto* train = app.add_subcommand("train", "Run one training phase");
  tr.add_to(*train);
  train->add_option("--phase", tr_phase, "Phase 1-4")->required()->check(CLI::Range(1, train::kNumPhases));
  train->add_option("--data", tr_data, "Sample or preference-pair directory (generated on the fly when absent)")
      ->check(CLI::ExistingDirectory);
  train->add_option("--init", tr_init, "Checkpoint to continue from (required for phases 2-4)")
      ->check(CLI::ExistingFile);
  train->add_option("--log", tr_log, "Metrics log (default: OUT.metrics.jsonl)");
  train->add_option("--max-steps", tr_max_steps, "Stop after this many steps")->check(CLI::PositiveNumber);
  train->add_option("--checkpoint-every", tr_ckpt_every, "Also write OUT every N steps")
      ->check(CLI::NonNegativeNumber);

  // sample
  Common sm;
  std::string sm_ckpt, sm_bench, sm_scales;
  std::optional<int> sm_steps;
  auto* sample = app.add_subcommand("sample", "Generate videos for the evaluation suite");
  sm.add_to(*sample);
  sample->add_option("--ckpt", sm_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--bench", sm_bench, "Bench directory (built in memory when absent)")
      ->check(CLI::ExistingDirectory);
  sample->add_option("--steps", sm_steps, "Euler steps")->check(CLI::PositiveNumber);
  sample->add_option("--scales", sm_scales, "Guidance scales s1,s2,s3");

  // eval
  Common ev;
  std::string ev_ckpt, ev_bench, ev_scales;
  std::optional<int> ev_steps;
  bool ev_oracle = false;
  auto* eval = app.add_subcommand("eval", "Sample the suite and write a metric report");
  ev.add_to(*eval);
  auto* ev_ckpt_opt = eval->add_option("--ckpt", ev_ckpt, "Checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--bench", ev_bench, "Bench directory (built in memory when absent)")
      ->check(CLI::ExistingDirectory);
  eval->add_option("--steps", ev_steps, "Euler steps")->check(CLI::PositiveNumber);
  eval->add_option("--scales", ev_scales, "Guidance scales s1,s2,s3");
  auto* ev_oracle_opt = eval->add_flag("--oracle", ev_oracle, "Score the ground-truth targets instead of a model");
  ev_ckpt_opt->excludes(ev_oracle_opt);

  // ablate
  Common ab;
  bool ab_skip_pt = false;
  std::optional<int> ab_steps;
  auto* ablate = app.add_subcommand("ablate", "Train and compare the full recipe against its ablations");
  ab.add_to(*ablate);
  ablate->add_flag("--skip-single-stage", ab_skip_pt, "Omit the single-stage variant");
  ablate->add_option("--steps", ab_steps, "Euler steps for evaluation")->check(CLI::PositiveNumber);

  // selftest
  Common st;
  auto* selftest = app.add_subcommand("selftest", "Run the analytic identity suite");
  st.add_to(*selftest, false);

  std::vector<std::string> argv_store{"mvi"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kUsageError;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "gen-data") {
      const auto cfg = gd.load();
      std::vector<toygen::ToySample> samples;
      samples.reserve(gd_count);
      for (std::size_t i = 0; i < gd_count; ++i) samples.push_back(toygen::build_sample(cfg.data, derive_seed(cfg.seed, {i})));
      io::write_samples(gd.out, samples);
      write_manifest(gd.out, true, command, args, cfg, Json{{"seed", cfg.seed}});
      out << "wrote " << samples.size() << " samples to " << gd.out << "\n";
    } else if (command == "gen-bench") {
      const auto cfg = gb.load();
      const auto bench = toygen::build_bench(cfg.data);
      io::write_bench(gb.out, bench);
      write_manifest(gb.out, true, command, args, cfg, Json{{"seed", cfg.seed}});
      out << "wrote " << bench.size() << " cases to " << gb.out << "\n";
    } else if (command == "gen-prefs") {
      const auto cfg = gp.load();
      const auto pairs = toygen::build_preference_set(cfg.data, cfg.seed, gp_count);
      io::write_pairs(gp.out, pairs);
      write_manifest(gp.out, true, command, args, cfg, Json{{"seed", cfg.seed}});
      out << "wrote " << pairs.size() << " preference pairs to " << gp.out << "\n";
    } else if (command == "train") {
      const auto cfg = tr.load();
      const auto plan = train::build_schedule(cfg.schedule);
      const auto& phase = plan[static_cast<std::size_t>(tr_phase - 1)];
      train::TrainState state;
      if (!tr_init.empty()) {
        state = train::load_checkpoint(tr_init);
      } else if (tr_phase == 1) {
        state = train::fresh_state(cfg.model, cfg.lora, cfg.seed);
      } else {
        throw train::PhaseGateError("phase " + std::to_string(tr_phase) + " needs --init with a completed phase " +
                                    std::to_string(tr_phase - 1) + " checkpoint");
      }

      std::unique_ptr<train::SampleSource> source;
      std::vector<toygen::PreferencePair> pairs;
      if (tr_phase == train::kNumPhases) {
        pairs = tr_data.empty() ? toygen::build_preference_set(cfg.data, derive_seed(cfg.seed, {4}),
                                                               static_cast<std::size_t>(cfg.preference_pairs))
                                : io::read_pairs(tr_data);
        if (pairs.empty()) throw Error("no preference pairs in " + tr_data);
      } else if (tr_data.empty()) {
        auto gen = cfg.data;
        gen.variant_weights = phase.mixture;
        source = std::make_unique<train::GeneratedSource>(gen);
      } else {
        auto samples = train::select_variants(io::read_samples(tr_data), phase.mixture);
        if (samples.empty()) throw Error("no samples in " + tr_data + " match the phase mixture");
        source = std::make_unique<train::FixedSource>(std::move(samples));
      }

      auto options = trainer_options(cfg);
      options.metrics_log = tr_log.empty() ? fs::path(tr.out + ".metrics.jsonl") : fs::path(tr_log);
      options.checkpoint_every = tr_ckpt_every;
      options.checkpoint_path = tr.out;
      const auto result = train::run_phase(state, phase, {source.get(), &pairs}, options, tr_max_steps);
      train::save_checkpoint(state, tr.out);
      write_manifest(tr.out, false, command, args, cfg, Json{{"seed", state.seed}, {"phase", tr_phase}});
      out << "phase " << tr_phase << ": " << result.losses.size() << " steps";
      if (!result.losses.empty()) out << ", final loss " << result.losses.back();
      out << (state.complete ? ", complete" : ", incomplete") << "\n";
    } else if (command == "sample") {
      const auto cfg = sm.load();
      const auto state = train::load_checkpoint(sm_ckpt);
      const auto bench = bench_from(sm_bench, cfg);
      const auto outputs = sampler::batch_infer(state.params, bench, scales_from(sm_scales, cfg),
                                                sm_steps.value_or(cfg.sampler.steps), cfg.seed, cfg.patch);
      sampler::write_outputs(outputs, sm.out);
      write_manifest(sm.out, true, command, args, cfg, Json{{"seed", cfg.seed}});
      std::size_t failed = 0;
      for (const auto& o : outputs) {
        if (!o.error.empty()) {
          ++failed;
          err << o.case_id << ": " << o.error << "\n";
        }
      }
      out << "sampled " << outputs.size() - failed << "/" << outputs.size() << " cases into " << sm.out << "\n";
      if (failed > 0) return kRuntimeError;
    } else if (command == "eval") {
      const auto cfg = ev.load();
      if (!ev_oracle && ev_ckpt.empty()) throw UsageError("eval needs --ckpt or --oracle");
      const auto bench = bench_from(ev_bench, cfg);
      eval::EvalReport report;
      if (ev_oracle) {
        report = eval::evaluate_targets(bench);
      } else {
        const auto state = train::load_checkpoint(ev_ckpt);
        report = eval::run_bench(state.params, bench, scales_from(ev_scales, cfg),
                                 ev_steps.value_or(cfg.sampler.steps), cfg.seed, cfg.patch);
      }
      eval::write_report(ev.out, report);
      write_manifest(ev.out, false, command, args, cfg, Json{{"seed", cfg.seed}});
      const auto s = report.summary();
      out << "cases " << s.cases << " failed " << s.failed << " subject_consistency " << s.subject_consistency
          << " background_mse " << s.background_mse << " success_rate " << s.success_rate << "\n";
    } else if (command == "ablate") {
      const auto cfg = ab.load();
      eval::AblationOptions opt;
      opt.single_stage = !ab_skip_pt;
      opt.sample_steps = ab_steps.value_or(cfg.sampler.steps);
      const auto rows = eval::run_ablation(cfg, opt, [&](const std::string& m) { err << m << "\n"; });
      fs::create_directories(ab.out);
      const std::string table = eval::format_ablation(rows);
      std::ofstream(fs::path(ab.out) / "ablation.txt", std::ios::binary) << table;
      std::ofstream rows_out(fs::path(ab.out) / "ablation.jsonl", std::ios::binary);
      for (const auto& r : rows) {
        rows_out << Json{{"variant", r.name},
                         {"subject_consistency", r.summary.subject_consistency},
                         {"background_mse", r.summary.background_mse},
                         {"success_rate", r.summary.success_rate},
                         {"temporal_smoothness", r.summary.temporal_smoothness},
                         {"subject_region_mse", r.subject_region_mse}}
                        .dump()
                 << "\n";
      }
      write_manifest(ab.out, true, command, args, cfg, Json{{"seed", cfg.seed}});
      out << table;
    } else if (command == "selftest") {
      const auto checks = selftest::run_all();
      for (const auto& c : checks) {
        out << (c.passed ? "PASS " : "FAIL ") << c.name;
        if (!c.passed) out << ": " << c.detail;
        out << "\n";
      }
      if (!st.out.empty()) {
        const auto cfg = st.load();
        std::ofstream f(st.out, std::ios::binary | std::ios::trunc);
        for (const auto& c : checks) f << (c.passed ? "PASS " : "FAIL ") << c.name << "\n";
        write_manifest(st.out, false, command, args, cfg, Json{{"seed", cfg.seed}});
      }
      if (!selftest::all_passed(checks)) return kRuntimeError;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const config::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const train::PhaseGateError& e) {
    err << "prerequisite error: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace mvi::cli
