#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lossforge/error.hpp"

namespace lossforge {

/// Dense NCHW array. Conv weights reuse the same layout as (out, in, kh, kw).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : shape_{n, c, h, w}, data_(static_cast<std::size_t>(n) * c * h * w, fill) {}

  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t plane() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }
  std::size_t image_size() const { return shape_[1] * plane(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }

  T* image(int i) { return data_.data() + i * image_size(); }
  const T* image(int i) const { return data_.data() + i * image_size(); }
  std::span<const T> image_span(int i) const { return {image(i), image_size()}; }
  std::span<T> image_span(int i) { return {image(i), image_size()}; }

  T* channel(int i, int ch) { return image(i) + ch * plane(); }
  const T* channel(int i, int ch) const { return image(i) + ch * plane(); }

  T& operator()(int i, int ch, int y, int x) {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + ch) * shape_[2] + y) * shape_[3] + x];
  }
  const T& operator()(int i, int ch, int y, int x) const {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + ch) * shape_[2] + y) * shape_[3] + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  /// Copies images [first, first+count) into a new tensor.
  Tensor slice(int first, int count) const {
    Tensor out(count, c(), h(), w());
    std::copy_n(image(first), count * image_size(), out.data());
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n(), c(), h(), w());
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  /// Reinterprets the contiguous buffer with a new shape of equal element count.
  Tensor reshaped(int n, int c, int h, int w) const& {
    Tensor out = *this;
    out.reshape(n, c, h, w);
    return out;
  }
  void reshape(int n, int c, int h, int w) {
    require(static_cast<std::size_t>(n) * c * h * w == data_.size(), Errc::ShapeMismatch,
            "reshape changes element count");
    shape_ = {n, c, h, w};
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::array<int, 4> shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

inline std::string shape_str(const std::array<int, 4>& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) +
         "," + std::to_string(s[3]) + ")";
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(Errc::ShapeMismatch,
                std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

/// Trainable array with its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<T>(value.n(), value.c(), value.h(), value.w());
  }
};

/// Non-trainable named array (batch-norm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

template <typename T>
void zero_grads(std::vector<Param<T>>& ps) {
  for (auto& p : ps) p.grad.zero();
}

template <typename T>
std::size_t count_elements(const std::vector<Param<T>>& ps) {
  std::size_t n = 0;
  for (const auto& p : ps) n += p.value.size();
  return n;
}

/// FNV-1a over raw bytes; used for checkpoint integrity and isolation checks.
inline std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
std::uint64_t hash_tensor(const Tensor<T>& t, std::uint64_t h = 1469598103934665603ULL) {
  h = fnv1a(t.shape().data(), sizeof(int) * 4, h);
  return fnv1a(t.data(), t.size() * sizeof(T), h);
}

template <typename T>
std::uint64_t hash_params(const std::vector<Param<T>>& ps, std::uint64_t h = 1469598103934665603ULL) {
  for (const auto& p : ps) h = hash_tensor(p.value, h);
  return h;
}

}  // namespace lossforge
