// Copyright 2026 The mvi-toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument shapes or sizes disagree with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array with an owned buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Element at a 4-D index; the tensor must be rank 4.
  T& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  const T& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  /// Size of one slice along the leading axis.
  std::size_t stride0() const { return shape_.empty() ? 1 : data_.size() / shape_[0]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    }
    return Tensor(std::move(s), data_);
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Array = Tensor<float>;
using Mask = Tensor<std::uint8_t>;

/// Concatenate along the leading axis; trailing dims must agree.
template <typename T>
Tensor<T> concat0(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() == 0 ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw ShapeError("concat0: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<T> d;
  d.reserve(a.size() + b.size());
  d.insert(d.end(), a.vec().begin(), a.vec().end());
  d.insert(d.end(), b.vec().begin(), b.vec().end());
  return Tensor<T>(std::move(s), std::move(d));
}

/// Rows [begin, end) along the leading axis.
template <typename T>
Tensor<T> slice0(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.dim(0)) {
    throw ShapeError("slice0 out of range");
  }
  Shape s = a.shape();
  s[0] = end - begin;
  const std::size_t st = a.stride0();
  std::vector<T> d(a.vec().begin() + static_cast<std::ptrdiff_t>(begin * st),
                   a.vec().begin() + static_cast<std::ptrdiff_t>(end * st));
  return Tensor<T>(std::move(s), std::move(d));
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> d(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) d[i] = static_cast<To>(t[i]);
  return Tensor<To>(t.shape(), std::move(d));
}

}  // namespace mvi
