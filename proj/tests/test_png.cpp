// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <zlib.h>

#include <fstream>

#include "helpers.hpp"
#include "mvi/png.hpp"

using namespace mvi;

namespace {

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) | b[at + 3];
}

struct Decoded {
  std::uint32_t width = 0, height = 0;
  int color_type = -1;
  std::vector<std::uint8_t> raw;  // filtered scanlines
};

// Minimal reader: verifies signature and chunk CRCs, concatenates IDAT.
Decoded decode_png(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  const std::vector<std::uint8_t> b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::uint8_t sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  REQUIRE(b.size() > 8);
  REQUIRE(std::equal(sig, sig + 8, b.begin()));
  Decoded d;
  std::vector<std::uint8_t> z;
  std::size_t at = 8;
  bool ended = false;
  while (at + 12 <= b.size()) {
    const std::uint32_t len = be32(b, at);
    const std::string type(b.begin() + static_cast<std::ptrdiff_t>(at + 4), b.begin() + static_cast<std::ptrdiff_t>(at + 8));
    const std::uint32_t crc = be32(b, at + 8 + len);
    REQUIRE(crc == crc32(0L, b.data() + at + 4, len + 4));
    if (type == "IHDR") {
      d.width = be32(b, at + 8);
      d.height = be32(b, at + 12);
      CHECK(b[at + 16] == 8);
      d.color_type = b[at + 17];
    } else if (type == "IDAT") {
      z.insert(z.end(), b.begin() + static_cast<std::ptrdiff_t>(at + 8), b.begin() + static_cast<std::ptrdiff_t>(at + 8 + len));
    } else if (type == "IEND") {
      ended = true;
    }
    at += 12 + len;
  }
  CHECK(ended);
  CHECK(at == b.size());
  const std::size_t channels = d.color_type == 2 ? 3 : 1;
  uLongf n = d.height * (1 + d.width * channels);
  d.raw.resize(n);
  REQUIRE(uncompress(d.raw.data(), &n, z.data(), static_cast<uLong>(z.size())) == Z_OK);
  CHECK(n == d.raw.size());
  return d;
}

}  // namespace

TEST_SUITE("png") {
  TEST_CASE("RGB frame round-trips through an independent decoder") {
    const auto dir = testing::temp_dir("png");
    const std::size_t h = 3, w = 5;
    std::vector<float> frame(3 * h * w);
    for (std::size_t i = 0; i < frame.size(); ++i) frame[i] = static_cast<float>(i) / static_cast<float>(frame.size());
    frame[0] = -0.5f;  // clamped
    frame[1] = 2.0f;
    write_png(dir / "f.png", frame.data(), 3, h, w);
    const auto d = decode_png(dir / "f.png");
    CHECK(d.width == w);
    CHECK(d.height == h);
    CHECK(d.color_type == 2);
    for (std::size_t y = 0; y < h; ++y) {
      CHECK(d.raw[y * (1 + 3 * w)] == 0);
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const float v = std::clamp(frame[(c * h + y) * w + x], 0.0f, 1.0f);
          CHECK(d.raw[y * (1 + 3 * w) + 1 + 3 * x + c] == static_cast<std::uint8_t>(std::lround(v * 255.0f)));
        }
    }
  }

  TEST_CASE("grayscale frames use color type 0") {
    const auto dir = testing::temp_dir("png-g");
    std::vector<float> frame = {0.0f, 1.0f, 0.5f, 0.25f};
    write_png(dir / "g.png", frame.data(), 1, 2, 2);
    const auto d = decode_png(dir / "g.png");
    CHECK(d.color_type == 0);
    CHECK(d.raw == std::vector<std::uint8_t>{0, 0, 255, 0, 128, 64});
  }

  TEST_CASE("unsupported channel counts throw") {
    std::vector<float> frame(8);
    CHECK_THROWS_AS(write_png(testing::temp_dir("png-e") / "x.png", frame.data(), 2, 2, 2), Error);
  }
}
