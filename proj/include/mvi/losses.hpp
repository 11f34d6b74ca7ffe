// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Training objectives: the flow interpolant, velocity regression, the
// subject-focused (mask-weighted) variant, their weighted sum, and the
// preference losses built on a per-sample regression-error surrogate for the
// negative log-likelihood.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvi/cfi.hpp"
#include "mvi/dit.hpp"
#include "mvi/tensor.hpp"

namespace mvi::losses {

struct LossWeights {
  double lambda1 = 1.0;  ///< velocity regression
  double lambda2 = 1.0;  ///< subject-focused term
  double lambda = 1.0;   ///< preference penalty weight
  double gamma = 10.0;   ///< preference penalty target
  double beta = 1.0;     ///< preference temperature

  void validate() const;
};

/// z_t = (1 - t) z_0 + t eps.
template <typename T>
Tensor<T> flow_interpolate(const Tensor<T>& z0, const Tensor<T>& eps, double t);

/// mean(((z0 - eps) - pred)^2). When `grad` is non-null it receives d/d(pred).
template <typename T>
double fm_loss(const Tensor<T>& pred, const Tensor<T>& z0, const Tensor<T>& eps, Tensor<T>* grad = nullptr);

/// mean((M * ((z0 - eps) - pred))^2) with M (F x 1 x h x w) broadcast over channels.
template <typename T>
double sl_loss(const Tensor<T>& pred, const Tensor<T>& z0, const Tensor<T>& eps, const Tensor<T>& mask,
               Tensor<T>* grad = nullptr);

/// lambda1 * fm + lambda2 * sl.
template <typename T>
double combined_loss(const Tensor<T>& pred, const Tensor<T>& z0, const Tensor<T>& eps, const Tensor<T>& mask,
                     const LossWeights& w, Tensor<T>* grad = nullptr);

/// Union of the subject masks area-averaged over p x p cells, then `subject_frames`
/// frames of ones appended: (f + n) x 1 x (h/p) x (w/p).
template <typename T = float>
Tensor<T> downsample_mask(const std::vector<Mask>& pixel_masks, std::size_t p, std::size_t subject_frames);

/// Regression error restricted to the first `frames` frames (the video stream).
template <typename T>
double surrogate_from_pred(const Tensor<T>& pred, const Tensor<T>& z0, const Tensor<T>& eps, std::size_t frames,
                           Tensor<T>* grad = nullptr);

/// Negative log-likelihood surrogate of video latent `y` given conditions:
/// the velocity-regression error over the video frames at a shared (eps, t).
/// `eps` covers video and subject frames; subject frames regress onto the
/// clean subject latents in `conds`.
template <typename T>
double neg_logprob_surrogate(const dit::ModelParams<T>& params, const cfi::ConditionSet<T>& conds,
                             const Tensor<T>& y, const Tensor<T>& eps, double t, dit::ForwardOptions options = {});

/// -log sigmoid(beta * [(lw_ref - lw) - (ll_ref - ll)]).
double dpo_loss(double lw, double ll, double lw_ref, double ll_ref, double beta);
/// beta * [(lw_ref - lw) - (ll_ref - ll)].
double implicit_margin(double lw, double ll, double lw_ref, double ll_ref, double beta);
/// dpo + lambda * (ll - gamma)^2.
double ipo_loss(double dpo, double ll, double lambda, double gamma);

/// IPO loss and its partial derivatives with respect to the policy terms.
struct IpoTerms {
  double loss = 0, dpo = 0, margin = 0;
  double d_lw = 0, d_ll = 0;
};
IpoTerms ipo_terms(double lw, double ll, double lw_ref, double ll_ref, const LossWeights& w);

}  // namespace mvi::losses
