// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/selftest.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

#include "mvi/cfi.hpp"
#include "mvi/latent_codec.hpp"
#include "mvi/losses.hpp"
#include "mvi/rng.hpp"
#include "mvi/sampler.hpp"
#include "mvi/toygen.hpp"
#include "mvi/trainer.hpp"

namespace mvi::selftest {
namespace {

template <typename T>
bool bitwise(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

std::string num(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

Array noise(const Shape& s, std::uint64_t seed) {
  Array a(s);
  Rng(seed).fill_normal(a);
  return a;
}

// Each check returns an empty string on success or a failure description.
using Body = std::function<std::string()>;

std::vector<std::pair<const char*, Body>> checks() {
  const Shape shape{10, 48, 8, 8};
  return {
      {"flow_interpolate endpoints",
       [=] {
         const Array z0 = noise(shape, 1), eps = noise(shape, 2);
         if (!bitwise(losses::flow_interpolate(z0, eps, 0.0), z0)) return std::string("t=0 differs from z0");
         if (!bitwise(losses::flow_interpolate(z0, eps, 1.0), eps)) return std::string("t=1 differs from eps");
         return std::string();
       }},
      {"fm_loss zero at the true velocity",
       [=] {
         const Array z0 = noise(shape, 3), eps = noise(shape, 4);
         Array v(shape);
         for (std::size_t i = 0; i < v.size(); ++i) v[i] = z0[i] - eps[i];
         const double l = losses::fm_loss(v, z0, eps);
         return l == 0.0 ? std::string() : "loss " + num(l);
       }},
      {"sl_loss with an all-ones mask equals fm_loss",
       [=] {
         const Array p = noise(shape, 5), z0 = noise(shape, 6), eps = noise(shape, 7);
         Array m({shape[0], 1, shape[2], shape[3]});
         m.fill(1.0f);
         const double fm = losses::fm_loss(p, z0, eps), sl = losses::sl_loss(p, z0, eps, m);
         return fm == sl ? std::string() : "fm " + num(fm) + " sl " + num(sl);
       }},
      {"combined_loss with an all-ones mask is twice fm_loss",
       [=] {
         const Array p = noise(shape, 8), z0 = noise(shape, 9), eps = noise(shape, 10);
         Array m({shape[0], 1, shape[2], shape[3]});
         m.fill(1.0f);
         const double fm = losses::fm_loss(p, z0, eps);
         const double c = losses::combined_loss(p, z0, eps, m, losses::LossWeights{});
         return c == 2.0 * fm ? std::string() : "combined " + num(c) + " fm " + num(fm);
       }},
      {"combined_loss with a zero mask equals fm_loss",
       [=] {
         const Array p = noise(shape, 11), z0 = noise(shape, 12), eps = noise(shape, 13);
         const Array m({shape[0], 1, shape[2], shape[3]});
         const double fm = losses::fm_loss(p, z0, eps);
         const double c = losses::combined_loss(p, z0, eps, m, losses::LossWeights{});
         return c == fm ? std::string() : "combined " + num(c) + " fm " + num(fm);
       }},
      {"guidance telescopes to the full arm at unit scales",
       [=] {
         const Array a = noise(shape, 14), b = noise(shape, 15), c = noise(shape, 16), d = noise(shape, 17);
         Array got = sampler::joint_cfg(a, b, c, d, {1.0, 1.0, 1.0});
         if (!bitwise(got, d)) return std::string("unit scales do not return the full-condition velocity");
         got = sampler::joint_cfg(a, b, c, d, {0.0, 0.0, 0.0});
         if (!bitwise(got, a)) return std::string("zero scales do not return the unconditional velocity");
         return std::string();
       }},
      {"dpo_loss at the reference is log 2",
       [] {
         const double l = losses::dpo_loss(0.37, 1.25, 0.37, 1.25, 1.0);
         return std::abs(l - std::log(2.0)) <= 1e-9 ? std::string() : "loss " + num(l);
       }},
      {"ipo_loss penalty vanishes at gamma",
       [] {
         const double l = losses::ipo_loss(std::log(2.0), 10.0, 1.0, 10.0);
         return l == std::log(2.0) ? std::string() : "loss " + num(l);
       }},
      {"codec round trip",
       [] {
         const Array v = noise({8, 3, 32, 32}, 18);
         for (std::size_t p : {1, 2, 4, 8}) {
           if (!bitwise(codec::decode(codec::encode(v, p)), v)) return "patch " + std::to_string(p) + " differs";
         }
         return std::string();
       }},
      {"feature injection pack/split round trip",
       [] {
         const toygen::ToySample s = toygen::build_sample(toygen::GenConfig{}, 7);
         const cfi::ConditionSet<float> conds = train::conditions_of(s, 4);
         const std::size_t f = conds.source.dim(0), n = conds.subjects.dim(0);
         const Array z = noise({f + n, 48, 8, 8}, 19);
         const auto packed = cfi::pack(z, conds, 0.5);
         const auto [video, subjects] = cfi::split_input(packed);
         const auto again = cfi::assemble_input(video, subjects, 0.5);
         if (!bitwise(again.data, packed.data)) return std::string("reassembled input differs");
         const Array nv = slice0(z, 0, f), ns = slice0(z, f, f + n);
         if (!bitwise(video, cfi::pack_video_stream(nv, conds.source))) return std::string("video block differs");
         if (!bitwise(subjects, cfi::pack_subject_stream(ns, conds.subjects))) {
           return std::string("subject block differs");
         }
         return std::string();
       }},
  };
}

}  // namespace

std::vector<Check> run_all() {
  std::vector<Check> out;
  for (auto& [name, body] : checks()) {
    Check c{name, false, {}};
    try {
      c.detail = body();
      c.passed = c.detail.empty();
    } catch (const std::exception& e) {
      c.detail = std::string("exception: ") + e.what();
    }
    out.push_back(std::move(c));
  }
  return out;
}

bool all_passed(const std::vector<Check>& checks) {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

}  // namespace mvi::selftest
