// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/toygen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "mvi/rng.hpp"

namespace mvi::toygen {
namespace {

constexpr int kSuper = 4;  // supersample grid per pixel axis
constexpr int kCoverThreshold = kSuper * kSuper / 2;
constexpr double kMinVisibleFraction = 0.3;

// 5x5 glyph bitmaps, row-major, bit 24 is the top-left cell. Every glyph is
// 4-connected so the insertion detector sees a single component.
constexpr std::array<std::uint32_t, kNumGlyphs> kGlyphs = {
    0b01110'10001'11111'10001'10001,  // A
    0b11110'10001'11110'10001'11110,  // B
    0b00100'00100'11111'00100'00100,  // plus
    0b11111'00100'00100'00100'00100,  // T
    0b10001'10001'11111'10001'10001,  // H
    0b11111'10000'11110'10000'11111,  // E
    0b00100'01110'11111'01110'00100,  // diamond
    0b10001'10001'10001'10001'11111,  // U
};

bool glyph_bit(int id, int gx, int gy) {
  const int bit = 24 - (gy * 5 + gx);
  return (kGlyphs[static_cast<std::size_t>(id)] >> bit) & 1u;
}

// Inside test in pixel units relative to the shape center; r is the half extent.
bool inside(const SubjectSpec& s, double r, double dx, double dy) {
  switch (s.shape) {
    case ShapeKind::kCircle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::kSquare: return std::abs(dx) <= r && std::abs(dy) <= r;
    case ShapeKind::kTriangle:
      return dy >= -r && dy <= r && std::abs(dx) <= 0.5 * (dy + r);
    case ShapeKind::kGlyph: {
      if (std::abs(dx) >= r || std::abs(dy) >= r) return false;
      const int gx = std::clamp(static_cast<int>((dx + r) / (2 * r) * 5), 0, 4);
      const int gy = std::clamp(static_cast<int>((dy + r) / (2 * r) * 5), 0, 4);
      return glyph_bit(s.glyph_id, gx, gy);
    }
  }
  return false;
}

// Calls fn(y, x) for every pixel the subject covers when centered at (cx, cy) pixels.
template <typename Fn>
void rasterize(const SubjectSpec& s, double size, double cx, double cy, int height, int width, Fn&& fn) {
  const double r = size * height / 2.0;
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)) - 1);
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + r)) + 1);
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)) - 1);
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + r)) + 1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper;
          const double py = y + (sy + 0.5) / kSuper;
          hits += inside(s, r, px - cx, py - cy) ? 1 : 0;
        }
      }
      if (hits >= kCoverThreshold) fn(y, x);
    }
  }
}

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  Rgb o;
  for (int c = 0; c < 3; ++c) o[c] = static_cast<float>(a[c] + (b[c] - a[c]) * t);
  return o;
}

Rgb rotate_hue(const Rgb& c) { return {c[2], c[0], c[1]}; }

Rgb muted_color(Rng& rng) {
  Rgb c;
  for (auto& v : c) v = static_cast<float>(rng.uniform(0.3, 0.65));
  return c;
}

void check_dims(std::size_t n, int frames, int height, int width) {
  if (n < 1 || n > 2) throw Error("render_target: need 1 or 2 subjects, got " + std::to_string(n));
  if (frames < 2) throw Error("render_target: need at least 2 frames");
  if (height < 16 || width < 16) throw Error("render_target: frame must be at least 16x16");
}

void check_motions(const std::vector<Placement>& subjects, int frames) {
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    subjects[i].subject.validate();
    if (!subjects[i].motion.in_frame(frames)) {
      throw MotionError(i, "subject " + std::to_string(i) +
                               ": motion leaves the [0.1, 0.9]^2 region");
    }
  }
}

// Shared renderer; no argument checks.
Rendered render_impl(const SceneSpec& scene, const std::vector<Placement>& subjects, int frames,
                     int height, int width, const RenderOptions& opt) {
  const auto f = static_cast<std::size_t>(frames);
  const auto h = static_cast<std::size_t>(height);
  const auto w = static_cast<std::size_t>(width);
  Rendered out{Array({f, 3, h, w}), {}};
  for (std::size_t m = 0; m < subjects.size(); ++m) out.masks.emplace_back(Shape{f, 1, h, w});
  std::vector<int> owner(h * w);

  auto paint = [&](std::size_t k, int y, int x, const Rgb& c, int who) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      out.video.at4(k, ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = c[ch];
    }
    owner[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = who;
  };

  for (int k = 0; k < frames; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    std::fill(owner.begin(), owner.end(), -1);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) paint(ks, y, x, background_pixel(scene, k, y, x, height, width), -1);

    auto draw_subjects = [&] {
      if (!opt.hidden_frames.empty() && opt.hidden_frames[ks]) return;
      for (std::size_t m = 0; m < subjects.size(); ++m) {
        const auto& p = subjects[m];
        auto [cx, cy] = p.motion.center(k);
        double px = cx * width, py = cy * height;
        if (!opt.offsets.empty()) {
          px += opt.offsets[ks][m].first;
          py += opt.offsets[ks][m].second;
        }
        const Rgb color = opt.rotate_hue ? rotate_hue(p.subject.color) : p.subject.color;
        rasterize(p.subject, p.subject.size, px, py, height, width,
                  [&](int y, int x) { paint(ks, y, x, color, static_cast<int>(m)); });
      }
    };
    auto draw_occluder = [&] {
      if (!scene.occluder) return;
      const auto& o = *scene.occluder;
      for (int y = 0; y < height; ++y) {
        const double fy = (y + 0.5) / height;
        if (fy < o.y || fy >= o.y + o.height) continue;
        for (int x = 0; x < width; ++x) {
          const double fx = (x + 0.5) / width;
          if (fx >= o.x && fx < o.x + o.width) paint(ks, y, x, o.color, -2);
        }
      }
    };
    if (opt.subjects_over_occluder) {
      draw_occluder();
      draw_subjects();
    } else {
      draw_subjects();
      draw_occluder();
    }
    for (std::size_t m = 0; m < subjects.size(); ++m) {
      auto* mk = out.masks[m].data() + ks * h * w;
      for (std::size_t i = 0; i < h * w; ++i) mk[i] = owner[i] == static_cast<int>(m) ? 1 : 0;
    }
  }
  return out;
}

std::size_t mask_count(const Mask& m, std::size_t frame) {
  const std::size_t st = m.stride0();
  std::size_t n = 0;
  for (std::size_t i = 0; i < st; ++i) n += m[frame * st + i];
  return n;
}

MotionSpec draw_motion(Rng& rng, MotionKind kind, int frames) {
  MotionSpec m;
  m.kind = kind;
  const double span = std::max(1, frames - 1);
  switch (kind) {
    case MotionKind::kStatic:
      m.x0 = rng.uniform(0.15, 0.85);
      m.y0 = rng.uniform(0.15, 0.85);
      break;
    case MotionKind::kLinear:
      m.x0 = rng.uniform(0.15, 0.85);
      m.y0 = rng.uniform(0.15, 0.85);
      m.vx = rng.uniform(-0.6, 0.6) / span;
      m.vy = rng.uniform(-0.6, 0.6) / span;
      break;
    case MotionKind::kSinusoidal:
      m.x0 = rng.uniform(0.15, 0.85);
      m.y0 = rng.uniform(0.3, 0.7);
      m.vx = rng.uniform(-0.4, 0.4) / span;
      m.amplitude = rng.uniform(0.05, 0.2);
      m.frequency = rng.uniform(0.08, 0.25);
      m.phase = rng.uniform(0.0, 2 * std::numbers::pi);
      break;
    case MotionKind::kCircular:
      m.x0 = rng.uniform(0.3, 0.7);
      m.y0 = rng.uniform(0.3, 0.7);
      m.amplitude = rng.uniform(0.08, 0.2);
      m.frequency = rng.uniform(0.05, 0.15);
      m.phase = rng.uniform(0.0, 2 * std::numbers::pi);
      break;
  }
  return m;
}

SceneSpec draw_scene(Rng& rng, bool with_occluder) {
  SceneSpec s;
  s.background = static_cast<BackgroundKind>(rng.below(kNumBackgrounds));
  s.palette[0] = muted_color(rng);
  do {
    s.palette[1] = muted_color(rng);
  } while (std::max({std::abs(s.palette[0][0] - s.palette[1][0]), std::abs(s.palette[0][1] - s.palette[1][1]),
                     std::abs(s.palette[0][2] - s.palette[1][2])}) < 0.1f);
  if (with_occluder) {
    Occluder o;
    o.width = rng.uniform(0.12, 0.25);
    o.height = rng.uniform(0.3, 0.6);
    o.x = rng.uniform(0.2, 0.8 - o.width);
    o.y = rng.uniform(0.05, 0.95 - o.height);
    o.color = muted_color(rng);
    s.occluder = o;
  }
  return s;
}

}  // namespace

const std::array<Rgb, kNumColors>& subject_palette() {
  static const std::array<Rgb, kNumColors> p = {{
      {0.95f, 0.10f, 0.10f},  // red
      {0.10f, 0.90f, 0.10f},  // green
      {0.10f, 0.20f, 0.95f},  // blue
      {0.95f, 0.90f, 0.10f},  // yellow
      {0.90f, 0.10f, 0.90f},  // magenta
      {0.10f, 0.90f, 0.90f},  // cyan
      {1.00f, 0.50f, 0.00f},  // orange
      {0.50f, 0.00f, 1.00f},  // purple
  }};
  return p;
}

namespace {
constexpr std::array<const char*, kNumColors> kColorNames = {"red",     "green", "blue",   "yellow",
                                                             "magenta", "cyan",  "orange", "purple"};
constexpr std::array<const char*, kNumMotions> kMotionVerbs = {"slides", "bobs", "circles", "rests"};
}  // namespace

const char* to_string(ShapeKind k) {
  constexpr std::array<const char*, kNumShapes> n = {"circle", "square", "triangle", "glyph"};
  return n[static_cast<std::size_t>(k)];
}
const char* to_string(BackgroundKind k) {
  constexpr std::array<const char*, kNumBackgrounds> n = {"flat", "vgradient", "hgradient",
                                                          "checker", "stripes", "blobs"};
  return n[static_cast<std::size_t>(k)];
}
const char* to_string(MotionKind k) {
  constexpr std::array<const char*, kNumMotions> n = {"linear", "sinusoidal", "circular", "static"};
  return n[static_cast<std::size_t>(k)];
}
const char* to_string(Corruption k) {
  constexpr std::array<const char*, 4> n = {"jitter", "interpenetration", "color_shift", "vanish"};
  return n[static_cast<std::size_t>(k)];
}
Corruption corruption_from_string(const std::string& s) {
  for (int i = 0; i < 4; ++i) {
    if (s == to_string(static_cast<Corruption>(i))) return static_cast<Corruption>(i);
  }
  throw Error("unknown corruption '" + s + "'");
}

void SubjectSpec::validate() const {
  for (float c : color) {
    if (!(c >= 0.0f && c <= 1.0f)) throw Error("subject color channel outside [0,1]");
  }
  if (!(size > 0.1 && size < 0.4)) throw Error("subject size must lie in (0.1, 0.4)");
  if (glyph_id < 0 || glyph_id >= kNumGlyphs) throw Error("glyph id out of range");
}

bool distinct(const SubjectSpec& a, const SubjectSpec& b) {
  if (a.shape != b.shape) return true;
  float d = 0;
  for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(a.color[c] - b.color[c]));
  return d > 0.2f;
}

std::pair<double, double> MotionSpec::center(int k) const {
  const double a = 2 * std::numbers::pi * frequency * k + phase;
  switch (kind) {
    case MotionKind::kStatic: return {x0, y0};
    case MotionKind::kLinear: return {x0 + vx * k, y0 + vy * k};
    case MotionKind::kSinusoidal: return {x0 + vx * k, y0 + amplitude * std::sin(a)};
    case MotionKind::kCircular: return {x0 + amplitude * std::cos(a), y0 + amplitude * std::sin(a)};
  }
  return {x0, y0};
}

bool MotionSpec::in_frame(int frames) const {
  for (int k = 0; k < frames; ++k) {
    auto [x, y] = center(k);
    if (x < 0.1 || x > 0.9 || y < 0.1 || y > 0.9) return false;
  }
  return true;
}

Rgb background_pixel(const SceneSpec& s, int frame, int y, int x, int height, int width) {
  const auto& p0 = s.palette[0];
  const auto& p1 = s.palette[1];
  switch (s.background) {
    case BackgroundKind::kFlat: return p0;
    case BackgroundKind::kVGradient: return lerp(p0, p1, (y + 0.5) / height);
    case BackgroundKind::kHGradient: return lerp(p0, p1, (x + 0.5) / width);
    case BackgroundKind::kChecker: {
      const int ch = std::max(1, height / 4), cw = std::max(1, width / 4);
      return ((y / ch) + (x / cw)) % 2 ? p1 : p0;
    }
    case BackgroundKind::kStripes: return (y / std::max(1, height / 8)) % 2 ? p1 : p0;
    case BackgroundKind::kBlobs: {
      constexpr std::array<std::array<double, 4>, 3> blobs = {{
          {0.25, 0.30, 0.030, 0.010},
          {0.70, 0.60, -0.020, 0.025},
          {0.40, 0.80, 0.015, -0.020},
      }};
      const double fx = (x + 0.5) / width, fy = (y + 0.5) / height;
      for (const auto& b : blobs) {
        double bx = b[0] + b[2] * frame, by = b[1] + b[3] * frame;
        bx -= std::floor(bx);
        by -= std::floor(by);
        if ((fx - bx) * (fx - bx) + (fy - by) * (fy - by) <= 0.12 * 0.12) return p1;
      }
      return p0;
    }
  }
  return p0;
}

Rendered render_target(const SceneSpec& scene, const std::vector<Placement>& subjects, int frames,
                       int height, int width, const RenderOptions& options) {
  check_dims(subjects.size(), frames, height, width);
  check_motions(subjects, frames);
  if (!options.offsets.empty() && options.offsets.size() != static_cast<std::size_t>(frames)) {
    throw Error("render_target: offsets must have one entry per frame");
  }
  if (!options.hidden_frames.empty() && options.hidden_frames.size() != static_cast<std::size_t>(frames)) {
    throw Error("render_target: hidden_frames must have one entry per frame");
  }
  return render_impl(scene, subjects, frames, height, width, options);
}

Array erase_subject(const SceneSpec& scene, const std::vector<Placement>& subjects, int frames,
                    int height, int width) {
  check_dims(subjects.size(), frames, height, width);
  check_motions(subjects, frames);
  return render_impl(scene, {}, frames, height, width, {}).video;
}

Reference make_reference(const SubjectSpec& subject, std::uint64_t seed, const SceneSpec& avoid,
                         int height, int width) {
  subject.validate();
  Rng rng(derive_seed(seed, {0x7265665FULL}));
  SceneSpec scene = draw_scene(rng, false);
  const auto shift = 1 + rng.below(kNumBackgrounds - 1);
  scene.background = static_cast<BackgroundKind>((static_cast<std::uint64_t>(avoid.background) + shift) %
                                                 kNumBackgrounds);
  SubjectSpec posed = subject;
  posed.size = std::clamp(subject.size * rng.uniform(0.85, 1.15), 0.11, 0.39);
  MotionSpec pose;
  pose.x0 = rng.uniform(0.3, 0.7);
  pose.y0 = rng.uniform(0.3, 0.7);
  auto r = render_impl(scene, {{posed, pose}}, 1, height, width, {});
  return {r.video.reshaped({3, static_cast<std::size_t>(height), static_cast<std::size_t>(width)}), scene};
}

void GenConfig::validate() const {
  if (frames < 2) throw Error("GenConfig: frames must be >= 2");
  if (height < 16 || width < 16) throw Error("GenConfig: frame must be at least 16x16");
  if (vocab < tokens::kMinVocab || vocab > 64) throw Error("GenConfig: vocab must be in [18, 64]");
  double total = 0;
  for (double v : variant_weights) {
    if (v < 0) throw Error("GenConfig: negative variant weight");
    total += v;
  }
  if (total <= 0) throw Error("GenConfig: variant weights sum to zero");
  if (max_retries < 1) throw Error("GenConfig: max_retries must be >= 1");
}

Mask ToySample::union_mask() const {
  Mask u(subject_masks.at(0).shape());
  for (const auto& m : subject_masks)
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = static_cast<std::uint8_t>(u[i] | m[i]);
  return u;
}

int color_index(const Rgb& c) {
  int best = 0;
  float best_d = 1e9f;
  for (int i = 0; i < kNumColors; ++i) {
    float d = 0;
    for (int ch = 0; ch < 3; ++ch) d = std::max(d, std::abs(c[ch] - subject_palette()[i][ch]));
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

std::vector<std::int64_t> prompt_for(const std::vector<Placement>& subjects) {
  std::vector<std::int64_t> t;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (i) t.push_back(tokens::kAnd);
    t.push_back(tokens::kColorBase + color_index(subjects[i].subject.color));
    t.push_back(tokens::kShapeBase + static_cast<std::int64_t>(subjects[i].subject.shape));
    t.push_back(tokens::kMotionBase + static_cast<std::int64_t>(subjects[i].motion.kind));
  }
  return t;
}

std::string prompt_text(const std::vector<std::int64_t>& toks) {
  std::ostringstream os;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) os << ' ';
    const auto t = toks[i];
    if (t == tokens::kNull) os << "<null>";
    else if (t == tokens::kAnd) os << "and";
    else if (t < tokens::kShapeBase) os << kColorNames[static_cast<std::size_t>(t - tokens::kColorBase)];
    else if (t < tokens::kMotionBase) os << to_string(static_cast<ShapeKind>(t - tokens::kShapeBase));
    else if (t < tokens::kMinVocab) os << kMotionVerbs[static_cast<std::size_t>(t - tokens::kMotionBase)];
    else os << "<" << t << ">";
  }
  return os.str();
}

ToySample build_sample(const GenConfig& config, std::uint64_t seed, const Overrides& overrides) {
  config.validate();
  Rng rng(derive_seed(seed, {0x73616D70ULL}));
  ToySample s;
  s.seed = seed;
  if (overrides.variant) {
    s.variant = *overrides.variant;
  } else {
    double total = 0;
    for (double v : config.variant_weights) total += v;
    double u = rng.uniform() * total;
    s.variant = kNumVariants - 1;
    for (int i = 0; i < kNumVariants; ++i) {
      if (u < config.variant_weights[static_cast<std::size_t>(i)]) {
        s.variant = i;
        break;
      }
      u -= config.variant_weights[static_cast<std::size_t>(i)];
    }
  }
  if (s.variant < 0 || s.variant >= kNumVariants) throw Error("build_sample: variant out of range");
  const std::size_t n = s.variant >= 2 ? 2 : 1;
  const bool occluded = s.variant % 2 == 1;

  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    SceneSpec scene = draw_scene(rng, occluded);
    std::vector<Placement> subjects;
    int first_color = -1;
    for (std::size_t m = 0; m < n; ++m) {
      SubjectSpec spec;
      spec.shape = static_cast<ShapeKind>(rng.below(kNumShapes));
      int ci = static_cast<int>(rng.below(kNumColors));
      if (m == 1 && ci == first_color) ci = (ci + 1 + static_cast<int>(rng.below(kNumColors - 1))) % kNumColors;
      if (m == 0) first_color = ci;
      spec.color = subject_palette()[static_cast<std::size_t>(ci)];
      spec.size = kSubjectSizes[rng.below(kSubjectSizes.size())];
      spec.glyph_id = static_cast<int>(rng.below(kNumGlyphs));
      const MotionKind kind = (m == 0 && overrides.motion)
                                  ? *overrides.motion
                                  : static_cast<MotionKind>(rng.below(kNumMotions));
      subjects.push_back({spec, draw_motion(rng, kind, config.frames)});
    }
    bool ok = true;
    for (const auto& p : subjects) ok = ok && p.motion.in_frame(config.frames);
    if (!ok) continue;

    Rendered target = render_impl(scene, subjects, config.frames, config.height, config.width, {});
    // Every subject must stay substantially visible in every frame.
    for (std::size_t m = 0; m < n && ok; ++m) {
      SceneSpec bare = scene;
      bare.occluder.reset();
      Rendered solo = render_impl(bare, {subjects[m]}, config.frames, config.height, config.width, {});
      for (std::size_t k = 0; k < static_cast<std::size_t>(config.frames) && ok; ++k) {
        const auto full = mask_count(solo.masks[0], k);
        ok = full > 0 && static_cast<double>(mask_count(target.masks[m], k)) >= kMinVisibleFraction * full;
      }
    }
    if (!ok) continue;

    s.scene = scene;
    s.subjects = std::move(subjects);
    s.target_video = std::move(target.video);
    s.subject_masks = std::move(target.masks);
    s.source_video = render_impl(scene, {}, config.frames, config.height, config.width, {}).video;
    s.prompt_tokens = prompt_for(s.subjects);
    for (std::size_t m = 0; m < n; ++m) {
      auto ref = make_reference(s.subjects[m].subject, derive_seed(seed, {0x52454600ULL, m}), scene,
                                config.height, config.width);
      s.reference_images.push_back(std::move(ref.image));
      s.reference_scenes.push_back(ref.scene);
    }
    return s;
  }
  throw Error("build_sample: no valid layout after " + std::to_string(config.max_retries) +
              " attempts (seed " + std::to_string(seed) + ")");
}

PreferencePair corrupt_for_preference(const ToySample& sample, Corruption corruption, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x70726566ULL}));
  const int f = static_cast<int>(sample.frames());
  const int h = static_cast<int>(sample.target_video.dim(2));
  const int w = static_cast<int>(sample.target_video.dim(3));
  RenderOptions opt;
  switch (corruption) {
    case Corruption::kJitter: {
      bool any = false;
      opt.offsets.assign(static_cast<std::size_t>(f), {});
      for (auto& fr : opt.offsets) {
        for (std::size_t m = 0; m < sample.num_subjects(); ++m) {
          const int dx = static_cast<int>(rng.below(5)) - 2;
          const int dy = static_cast<int>(rng.below(5)) - 2;
          any = any || dx != 0 || dy != 0;
          fr.emplace_back(dx, dy);
        }
      }
      if (!any) opt.offsets[0][0] = {2, 0};
      break;
    }
    case Corruption::kInterpenetration:
      if (!sample.scene.occluder) throw Error("interpenetration corruption requires an occluder");
      opt.subjects_over_occluder = true;
      break;
    case Corruption::kColorShift: opt.rotate_hue = true; break;
    case Corruption::kVanish: {
      const auto k = static_cast<std::size_t>(std::lround(0.3 * f));
      std::vector<std::size_t> idx(static_cast<std::size_t>(f));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      opt.hidden_frames.assign(static_cast<std::size_t>(f), false);
      for (std::size_t i = 0; i < k; ++i) opt.hidden_frames[idx[i]] = true;
      break;
    }
  }
  PreferencePair p;
  p.sample = sample;
  p.y_w = sample.target_video;
  p.y_l = render_target(sample.scene, sample.subjects, f, h, w, opt).video;
  p.corruption = corruption;
  return p;
}

std::vector<PreferencePair> build_preference_set(const GenConfig& config, std::uint64_t seed,
                                                 std::size_t count) {
  std::vector<PreferencePair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto kind = static_cast<Corruption>(i % 4);
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt >= static_cast<std::uint64_t>(config.max_retries)) {
        throw Error("build_preference_set: could not build pair " + std::to_string(i));
      }
      Overrides ov;
      if (kind == Corruption::kInterpenetration) ov.variant = attempt % 2 ? 3 : 1;
      ToySample s = build_sample(config, derive_seed(seed, {i, attempt}), ov);
      PreferencePair p = corrupt_for_preference(s, kind, derive_seed(seed, {i, attempt, 1}));
      if (!(p.y_l == p.y_w)) {
        out.push_back(std::move(p));
        break;
      }
    }
  }
  return out;
}

std::vector<EvalCase> build_bench(const GenConfig& config) {
  std::vector<EvalCase> cases;
  for (std::size_t i = 0; i < kBenchSize; ++i) {
    const std::uint64_t seed = derive_seed(0x62656E6368ULL, {i});
    Overrides ov;
    ov.variant = static_cast<int>(i % 4);
    ov.motion = static_cast<MotionKind>((i / 4) % 4);
    EvalCase c;
    c.sample = build_sample(config, seed, ov);
    char id[32];
    std::snprintf(id, sizeof(id), "case-%016llx", static_cast<unsigned long long>(seed));
    c.case_id = id;
    c.tags.emplace_back(c.sample.num_subjects() == 2 ? "multi" : "single");
    c.tags.emplace_back(c.sample.scene.occluder ? "occluder" : "clear");
    c.tags.push_back(std::string("motion:") + to_string(c.sample.subjects[0].motion.kind));
    cases.push_back(std::move(c));
  }
  return cases;
}

bool appears_as_crop(const Array& image, const Array& video) {
  const std::size_t c = image.dim(0), hr = image.dim(1), wr = image.dim(2);
  const std::size_t f = video.dim(0), h = video.dim(2), w = video.dim(3);
  if (video.dim(1) != c || hr > h || wr > w) return false;
  for (std::size_t k = 0; k < f; ++k) {
    for (std::size_t oy = 0; oy + hr <= h; ++oy) {
      for (std::size_t ox = 0; ox + wr <= w; ++ox) {
        bool same = true;
        for (std::size_t ch = 0; ch < c && same; ++ch)
          for (std::size_t y = 0; y < hr && same; ++y)
            for (std::size_t x = 0; x < wr && same; ++x)
              same = image[(ch * hr + y) * wr + x] == video.at4(k, ch, oy + y, ox + x);
        if (same) return true;
      }
    }
  }
  return false;
}

}  // namespace mvi::toygen
