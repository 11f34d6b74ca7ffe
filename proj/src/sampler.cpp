// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/sampler.hpp"

#include <array>
#include <cmath>
#include <sstream>

#include "mvi/latent_codec.hpp"
#include "mvi/oitf.hpp"
#include "mvi/png.hpp"
#include "mvi/rng.hpp"
#include "mvi/trainer.hpp"

namespace mvi::sampler {

void GuidanceScales::validate() const {
  for (double s : {s1, s2, s3}) {
    if (!std::isfinite(s) || s < 0) throw Error("guidance scales must be finite and >= 0");
  }
}

GuidanceScales parse_scales(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    double x = 0;
    try {
      x = std::stod(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size()) throw Error("invalid guidance scale '" + part + "'");
    v.push_back(x);
  }
  if (v.size() != 3) throw Error("expected three comma-separated guidance scales, got '" + text + "'");
  GuidanceScales s{v[0], v[1], v[2]};
  s.validate();
  return s;
}

template <typename T>
Tensor<T> joint_cfg(const Tensor<T>& v000, const Tensor<T>& vp00, const Tensor<T>& vpi0, const Tensor<T>& vpiv,
                    const GuidanceScales& sc) {
  if (v000.shape() != vp00.shape() || v000.shape() != vpi0.shape() || v000.shape() != vpiv.shape()) {
    throw ShapeError("joint_cfg: arm velocities differ in shape");
  }
  // Affine form with coefficients (1-s1, s1-s2, s2-s3, s3). Arms with a zero
  // coefficient are skipped, so unit scales return the full arm bitwise.
  const std::array<double, 4> coef{1.0 - sc.s1, sc.s1 - sc.s2, sc.s2 - sc.s3, sc.s3};
  const std::array<const Tensor<T>*, 4> arm{&v000, &vp00, &vpi0, &vpiv};
  Tensor<T> out(v000.shape());
  std::vector<double> acc(out.size(), 0.0);
  bool first = true;
  for (std::size_t a = 0; a < 4; ++a) {
    if (coef[a] == 0.0) continue;
    const Tensor<T>& v = *arm[a];
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double term = coef[a] * static_cast<double>(v[i]);
      acc[i] = first ? term : acc[i] + term;
    }
    first = false;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(acc[i]);
  return out;
}

template Tensor<float> joint_cfg<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                        const Tensor<float>&, const GuidanceScales&);
template Tensor<double> joint_cfg<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                          const Tensor<double>&, const GuidanceScales&);

void SampleRequest::validate() const {
  if (steps < 1) throw Error("SampleRequest: steps must be >= 1");
  scales.validate();
  const auto& src = conditions.source;
  const auto& sub = conditions.subjects;
  if (src.rank() != 4 || sub.rank() != 4 || src.dim(0) == 0 || sub.dim(0) == 0) {
    throw ShapeError("SampleRequest: conditions need a source latent and subject latents");
  }
  if (src.dim(1) != sub.dim(1) || src.dim(2) != sub.dim(2) || src.dim(3) != sub.dim(3)) {
    throw ShapeError("SampleRequest: source " + shape_str(src.shape()) + " and subjects " + shape_str(sub.shape()) +
                     " disagree");
  }
}

Array initial_noise(const SampleRequest& r) {
  const auto& src = r.conditions.source;
  Array eps({src.dim(0) + r.conditions.subjects.dim(0), src.dim(1), src.dim(2), src.dim(3)});
  Rng rng(derive_seed(r.seed, {0x6E6F697365ULL}));
  rng.fill_normal(eps);
  return eps;
}

SampleResult euler_sample(const VelocityFn& model, const SampleRequest& request, std::size_t patch) {
  request.validate();
  const std::size_t f = request.conditions.source.dim(0);
  const std::size_t n = request.conditions.subjects.dim(0);
  std::array<cfi::ConditionSet<float>, 4> arms;
  std::array<std::vector<std::int64_t>, 4> toks;
  for (cfi::Combo c : cfi::kAllCombos) {
    const auto i = static_cast<std::size_t>(c);
    arms[i] = cfi::apply_combo(request.conditions, c);
    toks[i] = arms[i].model_tokens();
  }

  // The state is integrated in double and rounded to float for each evaluation.
  Tensor<double> state = tensor_cast<double>(initial_noise(request));
  const double dt = 1.0 / request.steps;
  for (int k = request.steps; k >= 1; --k) {
    const double t = static_cast<double>(k) / request.steps;
    const Array z = tensor_cast<float>(state);
    std::array<Array, 4> v;
    for (std::size_t i = 0; i < 4; ++i) v[i] = model(cfi::pack(z, arms[i], t), toks[i]);
    const Array guided = joint_cfg(v[0], v[1], v[2], v[3], request.scales);
    if (guided.shape() != z.shape()) throw ShapeError("euler_sample: model returned " + shape_str(guided.shape()));
    for (std::size_t i = 0; i < state.size(); ++i) {
      state[i] += dt * static_cast<double>(guided[i]);
      if (!std::isfinite(state[i])) {
        throw Error("euler_sample: non-finite state at step " + std::to_string(request.steps - k));
      }
    }
  }
  const Array z = tensor_cast<float>(state);
  SampleResult out;
  out.video_latent = slice0(z, 0, f);
  out.video = codec::decode(codec::Latent<float>{out.video_latent, patch});
  out.subject_frames = codec::decode(codec::Latent<float>{slice0(z, f, f + n), patch});
  return out;
}

SampleResult euler_sample(const dit::Parameters& params, const SampleRequest& request, std::size_t patch) {
  const dit::Model<float> model(params);
  return euler_sample(
      [&](const cfi::PackedInput<float>& in, const std::vector<std::int64_t>& toks) { return model.forward(in, toks); },
      request, patch);
}

Array clamp_unit(Array video) {
  for (auto& v : video.span()) v = std::min(1.0f, std::max(0.0f, v));
  return video;
}

std::uint64_t case_seed(std::uint64_t seed, const std::string& case_id) {
  return derive_seed(seed, {hash_string(case_id)});
}

std::vector<CaseOutput> batch_infer(const dit::Parameters& params, const std::vector<toygen::EvalCase>& bench,
                                    const GuidanceScales& scales, int steps, std::uint64_t seed, std::size_t patch) {
  std::vector<CaseOutput> out;
  out.reserve(bench.size());
  const dit::Model<float> model(params);
  const VelocityFn fn = [&](const cfi::PackedInput<float>& in, const std::vector<std::int64_t>& toks) {
    return model.forward(in, toks);
  };
  for (const auto& c : bench) {
    CaseOutput o;
    o.case_id = c.case_id;
    try {
      SampleRequest r;
      r.conditions = train::conditions_of(c.sample, patch);
      r.steps = steps;
      r.scales = scales;
      r.seed = case_seed(seed, c.case_id);
      o.result = euler_sample(fn, r, patch);
    } catch (const Error& e) {
      o.error = e.what();
    }
    out.push_back(std::move(o));
  }
  return out;
}

void write_outputs(const std::vector<CaseOutput>& outputs, const std::filesystem::path& dir) {
  for (const auto& o : outputs) {
    if (!o.result) continue;
    const auto cdir = dir / o.case_id;
    std::filesystem::create_directories(cdir);
    const Array video = clamp_unit(o.result->video);
    const std::size_t frame = video.stride0();
    for (std::size_t k = 0; k < video.dim(0); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03zu.png", k);
      write_png(cdir / name, video.data() + k * frame, video.dim(1), video.dim(2), video.dim(3));
    }
    oitf::Container c;
    c.add("video", o.result->video);
    c.add("subject_frames", o.result->subject_frames);
    oitf::write_container(cdir / "sample.oitf", c);
  }
}

}  // namespace mvi::sampler
