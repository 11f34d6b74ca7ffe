// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <functional>

#include "helpers.hpp"
#include "mvi/losses.hpp"

using namespace mvi;
using losses::LossWeights;

namespace {

using D = Tensor<double>;

D filled(const Shape& s, double v) {
  D t(s);
  t.fill(v);
  return t;
}

// Central differences of a scalar function of `x`, compared against `grad`.
std::size_t count_fd_mismatches(D& x, const D& grad, const std::function<double()>& f, double tol) {
  std::size_t bad = 0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    const double fd = (up - down) / (2 * h);
    if (std::abs(fd - grad[i]) > tol * std::max(1e-3, std::abs(fd))) ++bad;
  }
  return bad;
}

Mask pixel_mask(std::size_t f, std::size_t h, std::size_t w) { return Mask({f, 1, h, w}); }

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("flow interpolant at the endpoints and a midpoint") {
    Rng rng(1);
    const auto z0 = testing::random_tensor<double>({2, 3, 4, 4}, rng);
    const auto eps = testing::random_tensor<double>({2, 3, 4, 4}, rng);
    CHECK(losses::flow_interpolate(z0, eps, 0.0) == z0);
    CHECK(losses::flow_interpolate(z0, eps, 1.0) == eps);
    const auto mid = losses::flow_interpolate(filled({2, 3}, 0.0), filled({2, 3}, 2.0), 0.25);
    for (double v : mid.span()) CHECK(v == 0.5);
    CHECK_THROWS_AS(losses::flow_interpolate(z0, filled({2, 3}, 0.0), 0.5), ShapeError);
    CHECK_THROWS_AS(losses::flow_interpolate(z0, eps, 1.5), Error);
  }

  TEST_CASE("velocity regression on constant residuals") {
    const Shape s{3, 2, 4, 4};
    const D zero = filled(s, 0.0);
    CHECK(losses::fm_loss(zero, filled(s, 1.0), filled(s, 0.0)) == 1.0);
    CHECK(losses::fm_loss(zero, filled(s, 3.0), filled(s, 1.0)) == 4.0);
    Rng rng(2);
    const auto z0 = testing::random_tensor<double>(s, rng), eps = testing::random_tensor<double>(s, rng);
    D v(s);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = z0[i] - eps[i];
    CHECK(losses::fm_loss(v, z0, eps) == 0.0);
    CHECK_THROWS_AS(losses::fm_loss(filled({3, 2, 4, 5}, 0.0), z0, eps), ShapeError);
  }

  TEST_CASE("subject-focused term with full, empty and half masks") {
    const Shape s{2, 3, 4, 4};
    const D pred = filled(s, 0.0), z0 = filled(s, 1.0), eps = filled(s, 0.0);
    CHECK(losses::sl_loss(pred, z0, eps, filled({2, 1, 4, 4}, 1.0)) == losses::fm_loss(pred, z0, eps));
    CHECK(losses::sl_loss(pred, z0, eps, filled({2, 1, 4, 4}, 0.0)) == 0.0);
    D half({2, 1, 4, 4});
    for (std::size_t i = 0; i < half.size(); i += 2) half[i] = 1.0;
    CHECK(losses::sl_loss(pred, z0, eps, half) == 0.5);
    CHECK_THROWS_AS(losses::sl_loss(pred, z0, eps, filled({2, 1, 4, 4}, 1.5)), Error);
    CHECK_THROWS_AS(losses::sl_loss(pred, z0, eps, filled({2, 3, 4, 4}, 1.0)), ShapeError);
  }

  TEST_CASE("fractional masks damp the residual quadratically") {
    const Shape s{1, 1, 2, 2};
    const D m = filled(s, 0.5);
    CHECK(losses::sl_loss(filled(s, 0.0), filled(s, 2.0), filled(s, 0.0), m) == 1.0);
  }

  TEST_CASE("combined loss weights") {
    Rng rng(3);
    const Shape s{3, 2, 4, 4};
    const auto pred = testing::random_tensor<double>(s, rng), z0 = testing::random_tensor<double>(s, rng),
               eps = testing::random_tensor<double>(s, rng);
    const double fm = losses::fm_loss(pred, z0, eps);
    CHECK(losses::combined_loss(pred, z0, eps, filled({3, 1, 4, 4}, 0.7), LossWeights{1.0, 0.0}) == fm);
    CHECK(losses::combined_loss(pred, z0, eps, filled({3, 1, 4, 4}, 1.0), LossWeights{}) == 2.0 * fm);
    CHECK(losses::combined_loss(pred, z0, eps, filled({3, 1, 4, 4}, 0.0), LossWeights{}) == fm);
  }

  TEST_CASE("property: regression terms are nonnegative and the mask only damps") {
    Rng rng(4);
    for (int r = 0; r < 200; ++r) {
      const Shape s{1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5)};
      const auto pred = testing::random_tensor<double>(s, rng), z0 = testing::random_tensor<double>(s, rng),
                 eps = testing::random_tensor<double>(s, rng);
      D m({s[0], 1, s[2], s[3]});
      for (auto& v : m.span()) v = rng.uniform();
      const double fm = losses::fm_loss(pred, z0, eps), sl = losses::sl_loss(pred, z0, eps, m);
      CHECK(fm >= 0.0);
      CHECK(sl >= 0.0);
      CHECK(sl <= fm);
    }
  }

  TEST_CASE("downsampled masks: full, one aligned block, half a cell") {
    const std::size_t p = 4;
    Mask full = pixel_mask(2, 8, 8);
    full.fill(1);
    const auto a = losses::downsample_mask<double>({full}, p, 3);
    CHECK(a.shape() == Shape{5, 1, 2, 2});
    for (double v : a.span()) CHECK(v == 1.0);

    Mask block = pixel_mask(1, 8, 8);
    for (std::size_t y = 4; y < 8; ++y)
      for (std::size_t x = 0; x < 4; ++x) block.at4(0, 0, y, x) = 1;
    const auto b = losses::downsample_mask<double>({block}, p, 0);
    CHECK(b.at4(0, 0, 1, 0) == 1.0);
    CHECK(b.at4(0, 0, 0, 0) == 0.0);
    CHECK(b.at4(0, 0, 0, 1) == 0.0);
    CHECK(b.at4(0, 0, 1, 1) == 0.0);

    Mask half = pixel_mask(1, 8, 8);
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 4; x < 8; ++x) half.at4(0, 0, y, x) = 1;
    const auto c = losses::downsample_mask<double>({half}, p, 1);
    CHECK(c.at4(0, 0, 0, 1) == 0.5);
    CHECK(c.at4(1, 0, 0, 0) == 1.0);
  }

  TEST_CASE("downsampled masks take the union of subjects") {
    Mask a = pixel_mask(1, 4, 4), b = pixel_mask(1, 4, 4);
    a.at4(0, 0, 0, 0) = 1;
    a.at4(0, 0, 0, 1) = 1;
    b.at4(0, 0, 0, 1) = 1;
    b.at4(0, 0, 1, 1) = 1;
    const auto m = losses::downsample_mask<double>({a, b}, 2, 0);
    CHECK(m.at4(0, 0, 0, 0) == 0.75);
    CHECK_THROWS_AS(losses::downsample_mask<double>({pixel_mask(1, 6, 6)}, 4, 0), ShapeError);
    CHECK_THROWS_AS(losses::downsample_mask<double>({a, pixel_mask(2, 4, 4)}, 2, 0), ShapeError);
    CHECK_THROWS_AS(losses::downsample_mask<double>({}, 2, 0), Error);
  }

  TEST_CASE("regression gradients match finite differences") {
    Rng rng(5);
    const Shape s{3, 2, 3, 3};
    auto pred = testing::random_tensor<double>(s, rng);
    const auto z0 = testing::random_tensor<double>(s, rng), eps = testing::random_tensor<double>(s, rng);
    D m({3, 1, 3, 3});
    for (auto& v : m.span()) v = rng.uniform();
    D g;
    losses::fm_loss(pred, z0, eps, &g);
    CHECK(count_fd_mismatches(pred, g, [&] { return losses::fm_loss(pred, z0, eps); }, 1e-6) == 0);
    losses::sl_loss(pred, z0, eps, m, &g);
    CHECK(count_fd_mismatches(pred, g, [&] { return losses::sl_loss(pred, z0, eps, m); }, 1e-6) == 0);
    const LossWeights w{0.7, 1.3};
    losses::combined_loss(pred, z0, eps, m, w, &g);
    CHECK(count_fd_mismatches(pred, g, [&] { return losses::combined_loss(pred, z0, eps, m, w); }, 1e-6) == 0);
    losses::surrogate_from_pred(pred, z0, eps, 2, &g);
    CHECK(count_fd_mismatches(pred, g, [&] { return losses::surrogate_from_pred(pred, z0, eps, 2); }, 1e-6) == 0);
    for (std::size_t i = 2 * pred.stride0(); i < g.size(); ++i) CHECK(g[i] == 0.0);
  }

  TEST_CASE("surrogate of a zero-velocity model is the target mean square") {
    const auto cfg = testing::tiny_model();
    const auto params = dit::init_params<double>(cfg, 3);
    Rng rng(6);
    const auto conds = testing::random_conditions<double>(cfg, 3, 2, rng);
    const D y = filled({3, 3, 4, 4}, 0.25);
    D eps = filled({5, 3, 4, 4}, -0.75);
    const double l = losses::neg_logprob_surrogate(params, conds, y, eps, 0.4);
    CHECK(l == doctest::Approx(1.0).epsilon(1e-12));
    // Subject frames do not contribute.
    for (std::size_t i = 3 * eps.stride0(); i < eps.size(); ++i) eps[i] = 5.0;
    CHECK(losses::neg_logprob_surrogate(params, conds, y, eps, 0.4) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("surrogate is a pure function of its inputs") {
    const auto cfg = testing::tiny_model();
    auto params = dit::init_params<float>(cfg, 4);
    testing::randomize(params, 5);
    Rng rng(7);
    const auto conds = testing::random_conditions<float>(cfg, 3, 1, rng);
    const auto y = testing::random_tensor<float>({3, 3, 4, 4}, rng);
    const auto eps = testing::random_tensor<float>({4, 3, 4, 4}, rng);
    const double a = losses::neg_logprob_surrogate(params, conds, y, eps, 0.3);
    const double b = losses::neg_logprob_surrogate(params, conds, y, eps, 0.3);
    CHECK(a == b);
    CHECK(a > 0.0);
  }

  TEST_CASE("preference loss at the reference, in the limit and at a unit gap") {
    CHECK(losses::dpo_loss(2.0, 3.0, 2.0, 3.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(losses::dpo_loss(0.0, 1e6, 1e6, 0.0, 1.0) == doctest::Approx(0.0).scale(1e-300));
    // -log(1 / (1 + e^-1))
    const double expected = std::log1p(std::exp(-1.0));
    CHECK(expected == doctest::Approx(0.313262).epsilon(1e-6));
    CHECK(losses::dpo_loss(1.0, 2.0, 2.0, 2.0, 1.0) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(std::isfinite(losses::dpo_loss(1e6, 0.0, 0.0, 1e6, 1.0)));
  }

  TEST_CASE("property: preference loss is log 2 at the reference and shift invariant") {
    Rng rng(8);
    for (int r = 0; r < 500; ++r) {
      const double lw = rng.uniform(0, 5), ll = rng.uniform(0, 5), lwr = rng.uniform(0, 5), llr = rng.uniform(0, 5);
      const double beta = rng.uniform(0.1, 3), c = rng.uniform(-50, 50);
      CHECK(losses::dpo_loss(lw, ll, lw, ll, beta) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
      CHECK(losses::dpo_loss(lw + c, ll + c, lwr + c, llr + c, beta) ==
            doctest::Approx(losses::dpo_loss(lw, ll, lwr, llr, beta)).epsilon(1e-9));
    }
  }

  TEST_CASE("penalized preference loss") {
    CHECK(losses::ipo_loss(0.3, 12.0, 0.0, 10.0) == 0.3);
    CHECK(losses::ipo_loss(std::log(2.0), 10.0, 1.0, 10.0) == std::log(2.0));
    CHECK(losses::ipo_loss(0.5, 12.0, 1.0, 10.0) == 4.5);
  }

  TEST_CASE("preference partial derivatives match finite differences") {
    Rng rng(9);
    const LossWeights w{1.0, 1.0, 0.8, 3.0, 1.7};
    for (int r = 0; r < 100; ++r) {
      const double lw = rng.uniform(0, 5), ll = rng.uniform(0, 5), lwr = rng.uniform(0, 5), llr = rng.uniform(0, 5);
      const auto t = losses::ipo_terms(lw, ll, lwr, llr, w);
      CHECK(t.loss == doctest::Approx(losses::ipo_loss(losses::dpo_loss(lw, ll, lwr, llr, w.beta), ll, w.lambda,
                                                       w.gamma)));
      const double h = 1e-6;
      const double fw = (losses::ipo_terms(lw + h, ll, lwr, llr, w).loss -
                         losses::ipo_terms(lw - h, ll, lwr, llr, w).loss) / (2 * h);
      const double fl = (losses::ipo_terms(lw, ll + h, lwr, llr, w).loss -
                         losses::ipo_terms(lw, ll - h, lwr, llr, w).loss) / (2 * h);
      CHECK(t.d_lw == doctest::Approx(fw).epsilon(1e-6));
      CHECK(t.d_ll == doctest::Approx(fl).epsilon(1e-6));
    }
  }

  TEST_CASE("weights validate") {
    CHECK_NOTHROW(LossWeights{}.validate());
    LossWeights w;
    w.beta = 0;
    CHECK_THROWS_AS(w.validate(), Error);
    w = {};
    w.gamma = std::nan("");
    CHECK_THROWS_AS(w.validate(), Error);
  }
}
