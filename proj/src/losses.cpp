// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/losses.hpp"

#include <cmath>

#include "mvi/simd.hpp"

namespace mvi::losses {
namespace {

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

void LossWeights::validate() const {
  for (double v : {lambda1, lambda2, lambda, gamma, beta}) {
    if (!std::isfinite(v)) throw Error("LossWeights: all weights must be finite");
  }
  if (beta <= 0) throw Error("LossWeights: beta must be positive");
}

template <typename T>
Tensor<T> flow_interpolate(const Tensor<T>& z0, const Tensor<T>& eps, double t) {
  check_same(z0, eps, "flow_interpolate");
  if (!(t >= 0.0 && t <= 1.0)) throw Error("flow_interpolate: t must lie in [0, 1]");
  Tensor<T> out(z0.shape());
  const T a = static_cast<T>(1.0 - t), b = static_cast<T>(t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

template <typename T>
double fm_loss(const Tensor<T>& pred, const Tensor<T>& z0, const Tensor<T>& eps, Tensor<T>* grad) {
  check_same(pred, z0, "fm_loss");
  check_same(pred, eps, "fm_loss");
  const std::size_t n = pred.size();
  double sum = 0;
  if (grad) *grad = Tensor<T>(pred.shape());
  const T g = static_cast<T>(-2.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const T r = (z0[i] - eps[i]) - pred[i];
    sum += static_cast<double>(r) * static_cast<double>(r);
    if (grad) (*grad)[i] = g * r;
  }
  return sum / static_cast<double>(n);
}

template <typename T>
double sl_loss(const Tensor<T>& pred, const Tensor<T>& z0, const Tensor<T>& eps, const Tensor<T>& mask,
               Tensor<T>* grad) {
  check_same(pred, z0, "sl_loss");
  check_same(pred, eps, "sl_loss");
  if (pred.rank() != 4 || mask.rank() != 4 || mask.dim(0) != pred.dim(0) || mask.dim(1) != 1 ||
      mask.dim(2) != pred.dim(2) || mask.dim(3) != pred.dim(3)) {
    throw ShapeError("sl_loss: mask " + shape_str(mask.shape()) + " cannot broadcast over " + shape_str(pred.shape()));
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!(mask[i] >= T(0) && mask[i] <= T(1))) throw Error("sl_loss: mask values must lie in [0, 1]");
  }
  const std::size_t F = pred.dim(0), C = pred.dim(1), hw = pred.dim(2) * pred.dim(3);
  const std::size_t n = pred.size();
  if (grad) *grad = Tensor<T>(pred.shape());
  const T g = static_cast<T>(-2.0 / static_cast<double>(n));
  double sum = 0;
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < hw; ++s) {
        const std::size_t i = (f * C + c) * hw + s;
        const T m = mask[f * hw + s];
        const T r = (z0[i] - eps[i]) - pred[i];
        const T mr = m * r;
        sum += static_cast<double>(mr) * static_cast<double>(mr);
        if (grad) (*grad)[i] = g * m * mr;
      }
  return sum / static_cast<double>(n);
}

template <typename T>
double combined_loss(const Tensor<T>& pred, const Tensor<T>& z0, const Tensor<T>& eps, const Tensor<T>& mask,
                     const LossWeights& w, Tensor<T>* grad) {
  Tensor<T> g_fm, g_sl;
  const double fm = fm_loss(pred, z0, eps, grad ? &g_fm : nullptr);
  const double sl = w.lambda2 != 0.0 ? sl_loss(pred, z0, eps, mask, grad ? &g_sl : nullptr) : 0.0;
  if (grad) {
    *grad = Tensor<T>(pred.shape());
    simd::axpy(pred.size(), static_cast<T>(w.lambda1), g_fm.data(), grad->data());
    if (w.lambda2 != 0.0) simd::axpy(pred.size(), static_cast<T>(w.lambda2), g_sl.data(), grad->data());
  }
  return w.lambda1 * fm + w.lambda2 * sl;
}

template <typename T>
Tensor<T> downsample_mask(const std::vector<Mask>& pixel_masks, std::size_t p, std::size_t subject_frames) {
  if (pixel_masks.empty()) throw Error("downsample_mask: no masks");
  const auto& s0 = pixel_masks[0].shape();
  if (s0.size() != 4 || s0[1] != 1) throw ShapeError("downsample_mask: masks must be f x 1 x h x w");
  for (const auto& m : pixel_masks)
    if (m.shape() != s0) throw ShapeError("downsample_mask: mask shapes differ");
  const std::size_t f = s0[0], h = s0[2], w = s0[3];
  if (p == 0 || h % p != 0 || w % p != 0) throw ShapeError("downsample_mask: h and w must be divisible by p");
  const std::size_t hl = h / p, wl = w / p;
  Tensor<T> out({f + subject_frames, 1, hl, wl});
  const T inv = static_cast<T>(1.0 / static_cast<double>(p * p));
  for (std::size_t k = 0; k < f; ++k)
    for (std::size_t y = 0; y < hl; ++y)
      for (std::size_t x = 0; x < wl; ++x) {
        std::size_t cnt = 0;
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) {
            bool any = false;
            for (const auto& m : pixel_masks) any = any || m.at4(k, 0, y * p + dy, x * p + dx) != 0;
            cnt += any ? 1 : 0;
          }
        out.at4(k, 0, y, x) = static_cast<T>(cnt) * inv;
      }
  std::fill(out.data() + f * hl * wl, out.data() + out.size(), T(1));
  return out;
}

template <typename T>
double surrogate_from_pred(const Tensor<T>& pred, const Tensor<T>& z0, const Tensor<T>& eps, std::size_t frames,
                           Tensor<T>* grad) {
  check_same(pred, z0, "surrogate");
  check_same(pred, eps, "surrogate");
  if (frames == 0 || frames > pred.dim(0)) throw ShapeError("surrogate: frame count out of range");
  const std::size_t n = frames * pred.stride0();
  if (grad) *grad = Tensor<T>(pred.shape());
  const T g = static_cast<T>(-2.0 / static_cast<double>(n));
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T r = (z0[i] - eps[i]) - pred[i];
    sum += static_cast<double>(r) * static_cast<double>(r);
    if (grad) (*grad)[i] = g * r;
  }
  return sum / static_cast<double>(n);
}

template <typename T>
double neg_logprob_surrogate(const dit::ModelParams<T>& params, const cfi::ConditionSet<T>& conds, const Tensor<T>& y,
                             const Tensor<T>& eps, double t, dit::ForwardOptions options) {
  const Tensor<T> z0 = concat0(y, conds.subjects);
  const Tensor<T> zt = flow_interpolate(z0, eps, t);
  const auto packed = cfi::pack(zt, conds, t);
  const auto toks = conds.model_tokens();
  const Tensor<T> pred = dit::forward(params, packed, toks, options);
  return surrogate_from_pred(pred, z0, eps, y.dim(0));
}

double implicit_margin(double lw, double ll, double lw_ref, double ll_ref, double beta) {
  return beta * ((lw_ref - lw) - (ll_ref - ll));
}

double dpo_loss(double lw, double ll, double lw_ref, double ll_ref, double beta) {
  return softplus(-implicit_margin(lw, ll, lw_ref, ll_ref, beta));
}

double ipo_loss(double dpo, double ll, double lambda, double gamma) {
  return dpo + lambda * (ll - gamma) * (ll - gamma);
}

IpoTerms ipo_terms(double lw, double ll, double lw_ref, double ll_ref, const LossWeights& w) {
  IpoTerms r;
  r.margin = implicit_margin(lw, ll, lw_ref, ll_ref, w.beta);
  r.dpo = softplus(-r.margin);
  r.loss = ipo_loss(r.dpo, ll, w.lambda, w.gamma);
  // d(dpo)/d(margin) = -(1 - sigmoid(margin)); d(margin)/d(lw) = -beta, d(margin)/d(ll) = +beta.
  const double dm = -(1.0 - sigmoid(r.margin));
  r.d_lw = -w.beta * dm;
  r.d_ll = w.beta * dm + 2.0 * w.lambda * (ll - w.gamma);
  return r;
}

#define MVI_LOSSES_INSTANTIATE(T)                                                                              \
  template Tensor<T> flow_interpolate<T>(const Tensor<T>&, const Tensor<T>&, double);                          \
  template double fm_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                \
  template double sl_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                             Tensor<T>*);                                                                      \
  template double combined_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   const LossWeights&, Tensor<T>*);                                            \
  template Tensor<T> downsample_mask<T>(const std::vector<Mask>&, std::size_t, std::size_t);                   \
  template double surrogate_from_pred<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,    \
                                         Tensor<T>*);                                                          \
  template double neg_logprob_surrogate<T>(const dit::ModelParams<T>&, const cfi::ConditionSet<T>&,            \
                                           const Tensor<T>&, const Tensor<T>&, double, dit::ForwardOptions);

MVI_LOSSES_INSTANTIATE(float)
MVI_LOSSES_INSTANTIATE(double)

}  // namespace mvi::losses
