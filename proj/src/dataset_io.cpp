// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/dataset_io.hpp"

#include <cstdio>
#include <fstream>

#include "mvi/oitf.hpp"

namespace mvi::io {
namespace fs = std::filesystem;
using namespace toygen;

namespace {

template <typename E, int N>
E enum_from(const std::string& s, const char* what) {
  for (int i = 0; i < N; ++i) {
    if (s == to_string(static_cast<E>(i))) return static_cast<E>(i);
  }
  throw DatasetError(std::string("unknown ") + what + " '" + s + "'");
}

Json rgb(const Rgb& c) { return Json::array({c[0], c[1], c[2]}); }

Rgb rgb_from(const Json& j) {
  const auto v = j.get<std::vector<float>>();
  if (v.size() != 3) throw DatasetError("color needs three channels");
  return {v[0], v[1], v[2]};
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DatasetError("write failed for " + path.string());
}

Json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

std::string entry_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

std::string indexed(const char* base, std::size_t i) { return std::string(base) + "_" + std::to_string(i); }

Json sample_meta(const ToySample& s) {
  Json subjects = Json::array();
  for (const auto& p : s.subjects) subjects.push_back({{"subject", to_json(p.subject)}, {"motion", to_json(p.motion)}});
  Json refs = Json::array();
  for (const auto& r : s.reference_scenes) refs.push_back(to_json(r));
  return Json{{"seed", s.seed},
              {"variant", s.variant},
              {"prompt_tokens", s.prompt_tokens},
              {"prompt", prompt_text(s.prompt_tokens)},
              {"scene", to_json(s.scene)},
              {"subjects", subjects},
              {"reference_scenes", refs}};
}

void add_sample_tensors(oitf::Container& c, const ToySample& s) {
  const std::size_t n = s.prompt_tokens.size();
  c.add("prompt_tokens", Tensor<std::int64_t>({n}, std::vector<std::int64_t>(s.prompt_tokens)));
  c.add("source_video", s.source_video);
  c.add("target_video", s.target_video);
  for (std::size_t i = 0; i < s.reference_images.size(); ++i) c.add(indexed("reference", i), s.reference_images[i]);
  for (std::size_t i = 0; i < s.subject_masks.size(); ++i) c.add(indexed("mask", i), s.subject_masks[i]);
}

ToySample sample_from(const Json& meta, const oitf::Container& c) {
  ToySample s;
  try {
    s.seed = meta.at("seed").get<std::uint64_t>();
    s.variant = meta.at("variant").get<int>();
    s.prompt_tokens = meta.at("prompt_tokens").get<std::vector<std::int64_t>>();
    s.scene = scene_from_json(meta.at("scene"));
    for (const auto& p : meta.at("subjects")) {
      s.subjects.push_back({subject_from_json(p.at("subject")), motion_from_json(p.at("motion"))});
    }
    for (const auto& r : meta.at("reference_scenes")) s.reference_scenes.push_back(scene_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("bad sample metadata: ") + e.what());
  }
  const auto& toks = c.get<std::int64_t>("prompt_tokens");
  if (std::vector<std::int64_t>(toks.span().begin(), toks.span().end()) != s.prompt_tokens) {
    throw DatasetError("prompt tokens in meta.json and tensors disagree");
  }
  s.source_video = c.get<float>("source_video");
  s.target_video = c.get<float>("target_video");
  for (std::size_t i = 0; i < s.subjects.size(); ++i) {
    s.reference_images.push_back(c.get<float>(indexed("reference", i)));
    s.subject_masks.push_back(c.get<std::uint8_t>(indexed("mask", i)));
  }
  return s;
}

void write_index(const fs::path& dir, const char* kind, std::size_t count) {
  Json entries = Json::array();
  for (std::size_t i = 0; i < count; ++i) entries.push_back(entry_name(i));
  write_json(dir / "index.json", Json{{"kind", kind}, {"count", count}, {"entries", entries}});
}

std::vector<fs::path> entries_of(const fs::path& dir, const char* kind) {
  const Json idx = read_json(dir / "index.json");
  const std::string got = idx.value("kind", "");
  if (got != kind) throw DatasetError(dir.string() + " holds '" + got + "', expected '" + kind + "'");
  std::vector<fs::path> out;
  for (const auto& e : idx.at("entries")) out.push_back(dir / e.get<std::string>());
  return out;
}

}  // namespace

Json to_json(const SubjectSpec& s) {
  return Json{{"shape", to_string(s.shape)}, {"color", rgb(s.color)}, {"size", s.size}, {"glyph_id", s.glyph_id}};
}

Json to_json(const MotionSpec& m) {
  return Json{{"kind", to_string(m.kind)}, {"x0", m.x0},
              {"y0", m.y0},                {"vx", m.vx},
              {"vy", m.vy},                {"amplitude", m.amplitude},
              {"frequency", m.frequency},  {"phase", m.phase}};
}

Json to_json(const SceneSpec& s) {
  Json j{{"background", to_string(s.background)}, {"palette", Json::array({rgb(s.palette[0]), rgb(s.palette[1])})}};
  if (s.occluder) {
    const auto& o = *s.occluder;
    j["occluder"] = Json{{"x", o.x}, {"y", o.y}, {"width", o.width}, {"height", o.height}, {"color", rgb(o.color)}};
  } else {
    j["occluder"] = nullptr;
  }
  return j;
}

SubjectSpec subject_from_json(const Json& j) {
  SubjectSpec s;
  s.shape = enum_from<ShapeKind, kNumShapes>(j.at("shape").get<std::string>(), "shape");
  s.color = rgb_from(j.at("color"));
  s.size = j.at("size").get<double>();
  s.glyph_id = j.at("glyph_id").get<int>();
  s.validate();
  return s;
}

MotionSpec motion_from_json(const Json& j) {
  MotionSpec m;
  m.kind = enum_from<MotionKind, kNumMotions>(j.at("kind").get<std::string>(), "motion");
  m.x0 = j.at("x0").get<double>();
  m.y0 = j.at("y0").get<double>();
  m.vx = j.at("vx").get<double>();
  m.vy = j.at("vy").get<double>();
  m.amplitude = j.at("amplitude").get<double>();
  m.frequency = j.at("frequency").get<double>();
  m.phase = j.at("phase").get<double>();
  return m;
}

SceneSpec scene_from_json(const Json& j) {
  SceneSpec s;
  s.background = enum_from<BackgroundKind, kNumBackgrounds>(j.at("background").get<std::string>(), "background");
  const auto& pal = j.at("palette");
  if (!pal.is_array() || pal.size() != 2) throw DatasetError("scene palette needs two colors");
  s.palette = {rgb_from(pal[0]), rgb_from(pal[1])};
  const auto& o = j.at("occluder");
  if (!o.is_null()) {
    s.occluder = Occluder{o.at("x").get<double>(), o.at("y").get<double>(), o.at("width").get<double>(),
                          o.at("height").get<double>(), rgb_from(o.at("color"))};
  }
  return s;
}

void write_sample(const fs::path& dir, const ToySample& sample) {
  fs::create_directories(dir);
  oitf::Container c;
  add_sample_tensors(c, sample);
  oitf::write_container(dir / "tensors.oitf", c);
  write_json(dir / "meta.json", sample_meta(sample));
}

ToySample read_sample(const fs::path& dir) {
  return sample_from(read_json(dir / "meta.json"), oitf::read_container(dir / "tensors.oitf"));
}

void write_pair(const fs::path& dir, const PreferencePair& pair) {
  fs::create_directories(dir);
  oitf::Container c;
  add_sample_tensors(c, pair.sample);
  c.add("y_w", pair.y_w);
  c.add("y_l", pair.y_l);
  oitf::write_container(dir / "tensors.oitf", c);
  Json meta = sample_meta(pair.sample);
  meta["corruption"] = to_string(pair.corruption);
  write_json(dir / "meta.json", meta);
}

PreferencePair read_pair(const fs::path& dir) {
  const Json meta = read_json(dir / "meta.json");
  const auto c = oitf::read_container(dir / "tensors.oitf");
  PreferencePair p;
  p.sample = sample_from(meta, c);
  p.y_w = c.get<float>("y_w");
  p.y_l = c.get<float>("y_l");
  try {
    p.corruption = corruption_from_string(meta.at("corruption").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("bad pair metadata: ") + e.what());
  }
  return p;
}

void write_case(const fs::path& dir, const EvalCase& c) {
  write_sample(dir, c.sample);
  Json meta = read_json(dir / "meta.json");
  meta["case_id"] = c.case_id;
  meta["tags"] = c.tags;
  write_json(dir / "meta.json", meta);
}

EvalCase read_case(const fs::path& dir) {
  const Json meta = read_json(dir / "meta.json");
  EvalCase c;
  c.sample = sample_from(meta, oitf::read_container(dir / "tensors.oitf"));
  try {
    c.case_id = meta.at("case_id").get<std::string>();
    c.tags = meta.at("tags").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("bad case metadata: ") + e.what());
  }
  return c;
}

void write_samples(const fs::path& dir, const std::vector<ToySample>& samples) {
  for (std::size_t i = 0; i < samples.size(); ++i) write_sample(dir / entry_name(i), samples[i]);
  write_index(dir, kSamples, samples.size());
}

void write_pairs(const fs::path& dir, const std::vector<PreferencePair>& pairs) {
  for (std::size_t i = 0; i < pairs.size(); ++i) write_pair(dir / entry_name(i), pairs[i]);
  write_index(dir, kPairs, pairs.size());
}

void write_bench(const fs::path& dir, const std::vector<EvalCase>& bench) {
  for (std::size_t i = 0; i < bench.size(); ++i) write_case(dir / entry_name(i), bench[i]);
  write_index(dir, kBench, bench.size());
}

std::string dataset_kind(const fs::path& dir) {
  const Json idx = read_json(dir / "index.json");
  if (!idx.contains("kind") || !idx["kind"].is_string()) throw DatasetError(dir.string() + ": index has no kind");
  return idx["kind"].get<std::string>();
}

std::vector<ToySample> read_samples(const fs::path& dir) {
  std::vector<ToySample> out;
  for (const auto& p : entries_of(dir, kSamples)) out.push_back(read_sample(p));
  return out;
}

std::vector<PreferencePair> read_pairs(const fs::path& dir) {
  std::vector<PreferencePair> out;
  for (const auto& p : entries_of(dir, kPairs)) out.push_back(read_pair(p));
  return out;
}

std::vector<EvalCase> read_bench(const fs::path& dir) {
  std::vector<EvalCase> out;
  for (const auto& p : entries_of(dir, kBench)) out.push_back(read_case(p));
  return out;
}

}  // namespace mvi::io
