#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rmgpmsi/error.hpp"

namespace rmgpmsi {

/// Dense NCHW tensor. Vectors and matrices use trailing unit dims, so a
/// batch of B feature vectors of width c has shape (B, c, 1, 1).
template <typename T>
class Tensor {
 public:
  using Shape = std::array<std::size_t, 4>;

  Tensor() : shape_{0, 0, 0, 0} {}
  explicit Tensor(Shape shape, T value = T(0))
      : shape_(shape), data_(shape[0] * shape[1] * shape[2] * shape[3], value) {}
  Tensor(std::size_t n, std::size_t c, std::size_t h = 1, std::size_t w = 1, T value = T(0))
      : Tensor(Shape{n, c, h, w}, value) {}

  static Tensor like(const Tensor& other, T value = T(0)) { return Tensor(other.shape_, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t n() const noexcept { return shape_[0]; }
  std::size_t c() const noexcept { return shape_[1]; }
  std::size_t h() const noexcept { return shape_[2]; }
  std::size_t w() const noexcept { return shape_[3]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  /// Elements per batch item.
  std::size_t item_size() const noexcept { return shape_[1] * shape_[2] * shape_[3]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::span<T> item(std::size_t i) noexcept { return span().subspan(i * item_size(), item_size()); }
  std::span<const T> item(std::size_t i) const noexcept {
    return span().subspan(i * item_size(), item_size());
  }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h = 0, std::size_t w = 0) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h = 0, std::size_t w = 0) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void zero() { fill(T(0)); }

  Tensor& operator+=(const Tensor& other) {
    require(shape_ == other.shape_, ErrorKind::ShapeMismatch, "tensor += with different shapes");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline std::string shape_string(const std::array<std::size_t, 4>& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) +
         "," + std::to_string(s[3]) + ")";
}

/// Concatenates (B, c_i, 1, 1) tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  require(!parts.empty(), ErrorKind::ArityMismatch, "concat of zero tensors");
  const std::size_t batch = parts.front()->n();
  std::size_t width = 0;
  for (const auto* p : parts) {
    require(p->n() == batch && p->h() == 1 && p->w() == 1, ErrorKind::ShapeMismatch,
            "concat_channels expects (B,c,1,1) parts with equal batch");
    width += p->c();
  }
  Tensor<T> out(batch, width);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t offset = 0;
    for (const auto* p : parts) {
      std::copy_n(p->item(b).begin(), p->c(), out.item(b).begin() + offset);
      offset += p->c();
    }
  }
  return out;
}

/// Inverse of concat_channels: slices columns [offset, offset + width).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, std::size_t offset, std::size_t width) {
  require(offset + width <= t.c() && t.h() == 1 && t.w() == 1, ErrorKind::ShapeMismatch,
          "slice_channels out of range");
  Tensor<T> out(t.n(), width);
  for (std::size_t b = 0; b < t.n(); ++b)
    std::copy_n(t.item(b).begin() + offset, width, out.item(b).begin());
  return out;
}

}  // namespace rmgpmsi
