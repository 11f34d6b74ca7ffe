// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvi/oitf.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <unistd.h>

namespace mvi::oitf {
namespace {

static_assert(std::endian::native == std::endian::little, "OITF I/O assumes a little-endian host");

using Kind = ContainerError::Kind;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }

  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw ContainerError(Kind::kTruncated, "OITF data truncated at byte " + std::to_string(pos_));
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  std::size_t off = 0;
  while (off < b.size()) {
    const std::size_t n = std::min<std::size_t>(b.size() - off, 1u << 30);
    crc = crc32(crc, b.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kFloat32;
  if constexpr (std::is_same_v<T, std::int64_t>) return DType::kInt64;
  if constexpr (std::is_same_v<T, std::uint8_t>) return DType::kUInt8;
}

template <typename T>
AnyTensor read_payload(Reader& r, Shape shape) {
  const std::size_t n = shape_numel(shape);
  if (n > (std::numeric_limits<std::size_t>::max)() / sizeof(T)) {
    throw ContainerError(Kind::kTruncated, "OITF entry size overflows");
  }
  const std::uint8_t* p = r.take(n * sizeof(T));
  std::vector<T> data(n);
  if (n) std::memcpy(data.data(), p, n * sizeof(T));
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

void Container::add_any(std::string name, AnyTensor value) {
  if (has(name)) {
    throw ContainerError(Kind::kDuplicateName, "duplicate OITF entry name '" + name + "'");
  }
  entries_.push_back({std::move(name), std::move(value)});
}

const Container::Entry* Container::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void Container::add_text(std::string name, std::string_view text) {
  std::vector<std::uint8_t> d(text.begin(), text.end());
  const std::size_t n = d.size();
  add(std::move(name), Tensor<std::uint8_t>({n}, std::move(d)));
}

std::string Container::text(std::string_view name) const {
  const auto& t = get<std::uint8_t>(name);
  return std::string(t.vec().begin(), t.vec().end());
}

std::vector<std::uint8_t> encode(const Container& c) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'O', 'I', 'T', 'F'});
  put<std::uint16_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.size()));
  for (const auto& e : c.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    std::visit(
        [&](const auto& t) {
          using T = typename std::decay_t<decltype(t)>::value_type;
          put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>()));
          put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
          for (auto d : t.shape()) put<std::uint64_t>(out, d);
          const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
          out.insert(out.end(), p, p + t.size() * sizeof(T));
        },
        e.value);
  }
  put<std::uint32_t>(out, crc32_of(out));
  return out;
}

Container decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4);
  if (std::memcmp(magic, "OITF", 4) != 0) throw ContainerError(Kind::kMagic, "not an OITF file (bad magic)");
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion) {
    throw ContainerError(Kind::kVersion, "unsupported OITF version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  Container c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    const auto* np = r.take(len);
    std::string name(reinterpret_cast<const char*>(np), len);
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    AnyTensor value;
    switch (static_cast<DType>(dtype)) {
      case DType::kFloat32: value = read_payload<float>(r, std::move(shape)); break;
      case DType::kInt64: value = read_payload<std::int64_t>(r, std::move(shape)); break;
      case DType::kUInt8: value = read_payload<std::uint8_t>(r, std::move(shape)); break;
      default: throw ContainerError(Kind::kDType, "unknown OITF dtype code " + std::to_string(dtype));
    }
    c.add_any(std::move(name), std::move(value));
  }
  const std::size_t body = r.pos();
  const auto stored = r.get<std::uint32_t>();
  if (r.pos() != bytes.size()) {
    throw ContainerError(Kind::kFormat, "trailing bytes after OITF checksum");
  }
  if (crc32_of(bytes.first(body)) != stored) {
    throw ContainerError(Kind::kChecksum, "OITF checksum mismatch");
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = encode(c);
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ContainerError(Kind::kIo, "cannot open " + tmp.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw ContainerError(Kind::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ContainerError(Kind::kIo, "rename to " + path.string() + " failed: " + ec.message());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContainerError(Kind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace mvi::oitf
