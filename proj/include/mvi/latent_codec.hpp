// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Parameter-free, exactly invertible stand-in for a video VAE: space-to-channel
// reindexing with spatial factor p and no temporal compression.
//
// Element ordering within a patch is row-major (channel, dy, dx):
//   latent[f][c*p*p + dy*p + dx][y][x] == video[f][c][y*p + dy][x*p + dx]

#pragma once

#include "mvi/tensor.hpp"

namespace mvi::codec {

inline constexpr std::size_t kDefaultPatch = 4;

template <typename T>
struct Latent {
  Tensor<T> data;  ///< f x (c*p*p) x (h/p) x (w/p)
  std::size_t patch = kDefaultPatch;
};

template <typename T>
Latent<T> encode(const Tensor<T>& video, std::size_t p = kDefaultPatch) {
  if (video.rank() != 4) throw ShapeError("encode: video must be rank 4, got " + shape_str(video.shape()));
  if (p == 0) throw ShapeError("encode: patch must be positive");
  const std::size_t f = video.dim(0), c = video.dim(1), h = video.dim(2), w = video.dim(3);
  if (h % p != 0 || w % p != 0) {
    throw ShapeError("encode: " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by patch " + std::to_string(p));
  }
  const std::size_t hl = h / p, wl = w / p;
  Tensor<T> out({f, c * p * p, hl, wl});
  for (std::size_t k = 0; k < f; ++k)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t y = 0; y < hl; ++y)
            for (std::size_t x = 0; x < wl; ++x)
              out.at4(k, (ch * p + dy) * p + dx, y, x) = video.at4(k, ch, y * p + dy, x * p + dx);
  return {std::move(out), p};
}

template <typename T>
Tensor<T> decode(const Latent<T>& latent) {
  const auto& z = latent.data;
  const std::size_t p = latent.patch;
  if (z.rank() != 4 || p == 0 || z.dim(1) % (p * p) != 0) {
    throw ShapeError("decode: latent " + shape_str(z.shape()) + " inconsistent with patch " +
                     std::to_string(p));
  }
  const std::size_t f = z.dim(0), c = z.dim(1) / (p * p), hl = z.dim(2), wl = z.dim(3);
  Tensor<T> out({f, c, hl * p, wl * p});
  for (std::size_t k = 0; k < f; ++k)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t y = 0; y < hl; ++y)
            for (std::size_t x = 0; x < wl; ++x)
              out.at4(k, ch, y * p + dy, x * p + dx) = z.at4(k, (ch * p + dy) * p + dx, y, x);
  return out;
}

/// Encodes a single c x h x w image as a 1-frame latent.
template <typename T>
Tensor<T> encode_image(const Tensor<T>& image, std::size_t p = kDefaultPatch) {
  if (image.rank() != 3) throw ShapeError("encode_image: image must be rank 3");
  return encode(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}), p).data;
}

}  // namespace mvi::codec
