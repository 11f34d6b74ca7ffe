// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural paired-data generator: composited sprite videos, their
// subject-erased sources, cross-scene subject references, synthetic preference
// pairs and the fixed evaluation suite.
//
// Rasterization is binary: a pixel belongs to a shape when at least half of a
// 4x4 supersample grid falls inside it. Compositing is painter's order
// (background, subjects in list order, occluder), so the erased source equals
// the target bitwise everywhere outside the subject masks.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mvi/tensor.hpp"

namespace mvi::toygen {

using Rgb = std::array<float, 3>;

enum class ShapeKind { kCircle, kSquare, kTriangle, kGlyph };
enum class BackgroundKind { kFlat, kVGradient, kHGradient, kChecker, kStripes, kBlobs };
enum class MotionKind { kLinear, kSinusoidal, kCircular, kStatic };
enum class Corruption { kJitter, kInterpenetration, kColorShift, kVanish };

inline constexpr int kNumShapes = 4;
inline constexpr int kNumBackgrounds = 6;
inline constexpr int kNumMotions = 4;
inline constexpr int kNumColors = 8;
inline constexpr int kNumGlyphs = 8;
inline constexpr int kNumVariants = 4;
inline constexpr std::array<double, 3> kSubjectSizes = {0.15, 0.25, 0.35};

/// Fixed subject palette; every entry is at L-inf distance >= 0.25 from any
/// background or occluder color, which are drawn from [0.3, 0.65]^3.
const std::array<Rgb, kNumColors>& subject_palette();

const char* to_string(ShapeKind k);
const char* to_string(BackgroundKind k);
const char* to_string(MotionKind k);
const char* to_string(Corruption k);
Corruption corruption_from_string(const std::string& s);

struct SubjectSpec {
  ShapeKind shape = ShapeKind::kCircle;
  Rgb color{1.0f, 1.0f, 1.0f};
  double size = 0.25;  ///< fraction of frame height, in (0.1, 0.4)
  int glyph_id = 0;    ///< selects a 5x5 bit pattern when shape == kGlyph

  /// Throws Error on out-of-range color, size or glyph id.
  void validate() const;
  bool operator==(const SubjectSpec&) const = default;
};

/// Distinct iff different shape or color L-inf distance > 0.2.
bool distinct(const SubjectSpec& a, const SubjectSpec& b);

struct Occluder {
  double x = 0.4, y = 0.2;        ///< top-left corner, fractional
  double width = 0.2, height = 0.5;
  Rgb color{0.5f, 0.5f, 0.5f};
  bool operator==(const Occluder&) const = default;
};

struct SceneSpec {
  BackgroundKind background = BackgroundKind::kFlat;
  std::array<Rgb, 2> palette{Rgb{0, 0, 0}, Rgb{0, 0, 0}};
  std::optional<Occluder> occluder;
  bool operator==(const SceneSpec&) const = default;
};

struct MotionSpec {
  MotionKind kind = MotionKind::kStatic;
  double x0 = 0.5, y0 = 0.5;   ///< start (linear/sinusoidal/static) or orbit center (circular)
  double vx = 0.0, vy = 0.0;   ///< per-frame velocity (linear; vx is drift for sinusoidal)
  double amplitude = 0.0;      ///< sinusoidal / circular radius
  double frequency = 0.0;      ///< cycles per frame
  double phase = 0.0;

  /// Subject center in fractional coordinates at a frame index.
  std::pair<double, double> center(int frame) const;
  /// True when the center stays inside [0.1, 0.9]^2 for frames [0, frames).
  bool in_frame(int frames) const;
  bool operator==(const MotionSpec&) const = default;
};

struct Placement {
  SubjectSpec subject;
  MotionSpec motion;
};

/// Rendered clip plus one binary mask stack (f x 1 x h x w) per subject.
struct Rendered {
  Array video;
  std::vector<Mask> masks;
};

/// Per-frame rendering modifiers used to build dispreferred samples.
struct RenderOptions {
  /// Integer pixel offsets [frame][subject] = (dx, dy); empty means none.
  std::vector<std::vector<std::pair<int, int>>> offsets;
  bool subjects_over_occluder = false;
  bool rotate_hue = false;
  /// Frames in which subjects are not drawn.
  std::vector<bool> hidden_frames;
};

/// Thrown when a motion leaves the valid region; names the subject index.
class MotionError : public Error {
 public:
  MotionError(std::size_t subject_index, const std::string& what)
      : Error(what), subject_index_(subject_index) {}
  std::size_t subject_index() const { return subject_index_; }

 private:
  std::size_t subject_index_;
};

Rendered render_target(const SceneSpec& scene, const std::vector<Placement>& subjects, int frames,
                       int height, int width, const RenderOptions& options = {});

/// The scene without subjects (occluder kept).
Array erase_subject(const SceneSpec& scene, const std::vector<Placement>& subjects, int frames,
                    int height, int width);

/// Background color at a pixel; a pure function of (scene, frame).
Rgb background_pixel(const SceneSpec& scene, int frame, int y, int x, int height, int width);

/// Subject reference on a background kind different from `avoid`.
struct Reference {
  Array image;  ///< c x h x w
  SceneSpec scene;
};
Reference make_reference(const SubjectSpec& subject, std::uint64_t seed, const SceneSpec& avoid,
                         int height, int width);

struct GenConfig {
  int frames = 8;
  int height = 32;
  int width = 32;
  int vocab = 64;
  /// Mixing weights over the four generator variants:
  /// 0 single subject, 1 single + occluder, 2 two subjects, 3 two subjects + occluder.
  std::array<double, kNumVariants> variant_weights{5, 2, 2, 1};
  int max_retries = 64;

  void validate() const;
};

/// Constraints used by the evaluation suite.
struct Overrides {
  std::optional<int> variant;
  std::optional<MotionKind> motion;
};

struct ToySample {
  std::uint64_t seed = 0;
  int variant = 0;
  SceneSpec scene;
  std::vector<Placement> subjects;
  std::vector<std::int64_t> prompt_tokens;
  std::vector<Array> reference_images;
  std::vector<SceneSpec> reference_scenes;
  Array source_video;
  Array target_video;
  std::vector<Mask> subject_masks;

  std::size_t frames() const { return target_video.dim(0); }
  std::size_t num_subjects() const { return subjects.size(); }
  /// f x 1 x h x w union of the subject masks.
  Mask union_mask() const;
};

/// Prompt vocabulary: 0 is the null/absent prompt, 1 is "and".
namespace tokens {
inline constexpr std::int64_t kNull = 0;
inline constexpr std::int64_t kAnd = 1;
inline constexpr std::int64_t kColorBase = 2;
inline constexpr std::int64_t kShapeBase = kColorBase + kNumColors;
inline constexpr std::int64_t kMotionBase = kShapeBase + kNumShapes;
inline constexpr std::int64_t kMinVocab = kMotionBase + kNumMotions;
}  // namespace tokens

std::vector<std::int64_t> prompt_for(const std::vector<Placement>& subjects);
std::string prompt_text(const std::vector<std::int64_t>& tokens);
int color_index(const Rgb& c);

ToySample build_sample(const GenConfig& config, std::uint64_t seed, const Overrides& overrides = {});

struct PreferencePair {
  ToySample sample;
  Array y_w;
  Array y_l;
  Corruption corruption = Corruption::kJitter;
};

PreferencePair corrupt_for_preference(const ToySample& sample, Corruption corruption,
                                      std::uint64_t seed);

/// Preference pairs over generated samples; corruption kinds cycle, and pairs
/// whose corruption would leave the video unchanged are redrawn.
std::vector<PreferencePair> build_preference_set(const GenConfig& config, std::uint64_t seed,
                                                 std::size_t count);

struct EvalCase {
  ToySample sample;
  std::string case_id;
  std::vector<std::string> tags;
};

inline constexpr std::size_t kBenchSize = 24;
std::vector<EvalCase> build_bench(const GenConfig& config);

/// True if `image` (c x hr x wr) equals some same-size window of some frame of `video`.
bool appears_as_crop(const Array& image, const Array& video);

}  // namespace mvi::toygen
