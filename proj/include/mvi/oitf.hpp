// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

// OITF: the on-disk tensor container used for datasets, checkpoints and
// sampler outputs.
//
// Layout (all integers little-endian):
//   "OITF"                      4 bytes magic
//   version                     u16, currently 1
//   entry count                 u32
//   per entry:
//     name length               u32, followed by that many UTF-8 bytes
//     dtype                     u8  (1 = float32, 2 = int64, 3 = uint8)
//     rank                      u8
//     dims                      rank x u64
//     payload                   prod(dims) elements, C row-major
//   crc32                       u32 over every preceding byte (zlib polynomial)

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mvi/tensor.hpp"

namespace mvi::oitf {

inline constexpr std::uint16_t kVersion = 1;

enum class DType : std::uint8_t { kFloat32 = 1, kInt64 = 2, kUInt8 = 3 };

class ContainerError : public Error {
 public:
  enum class Kind { kIo, kMagic, kVersion, kChecksum, kTruncated, kDType, kDuplicateName, kFormat };
  ContainerError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

using AnyTensor = std::variant<Tensor<float>, Tensor<std::int64_t>, Tensor<std::uint8_t>>;

/// Ordered collection of uniquely named arrays.
class Container {
 public:
  struct Entry {
    std::string name;
    AnyTensor value;
  };

  template <typename T>
  void add(std::string name, Tensor<T> value) {
    add_any(std::move(name), AnyTensor(std::move(value)));
  }
  void add_any(std::string name, AnyTensor value);

  bool has(std::string_view name) const { return find(name) != nullptr; }

  /// Typed lookup; throws if absent or stored with another dtype.
  template <typename T>
  const Tensor<T>& get(std::string_view name) const {
    const Entry* e = find(name);
    if (e == nullptr) throw Error("container has no entry '" + std::string(name) + "'");
    const auto* t = std::get_if<Tensor<T>>(&e->value);
    if (t == nullptr) throw Error("entry '" + std::string(name) + "' has a different dtype");
    return *t;
  }

  /// Stores a UTF-8 document (e.g. JSON metadata) as a uint8 vector.
  void add_text(std::string name, std::string_view text);
  std::string text(std::string_view name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  const Entry* find(std::string_view name) const;
  std::vector<Entry> entries_;
};

std::vector<std::uint8_t> encode(const Container& c);
Container decode(std::span<const std::uint8_t> bytes);

/// Writes to a temporary sibling and renames it into place.
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace mvi::oitf
