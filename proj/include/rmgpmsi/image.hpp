#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rmgpmsi/error.hpp"
#include "rmgpmsi/tensor.hpp"

namespace rmgpmsi {

enum class ValueRange { UnitFloat, Byte };

constexpr double range_max(ValueRange range) {
  return range == ValueRange::Byte ? 255.0 : 1.0;
}

/// Axis-aligned pixel rectangle: columns [x, x + w), rows [y, y + h).
struct Rect {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t w = 0;
  std::size_t h = 0;

  friend bool operator==(const Rect&, const Rect&) = default;

  bool contains(const Rect& o) const {
    return o.x >= x && o.y >= y && o.x + o.w <= x + w && o.y + o.h <= y + h;
  }
};

/// Row-major H x W x C image (interleaved channels).
template <typename T>
class BasicImage {
 public:
  using value_type = T;

  BasicImage() = default;
  BasicImage(std::size_t height, std::size_t width, std::size_t channels,
             ValueRange range = ValueRange::UnitFloat, T fill = T(0))
      : height_(height), width_(width), channels_(channels), range_(range),
        values_(height * width * channels, fill) {}
  BasicImage(std::size_t height, std::size_t width, std::size_t channels, ValueRange range,
             std::vector<T> values)
      : height_(height), width_(width), channels_(channels), range_(range), values_(std::move(values)) {
    require(values_.size() == height * width * channels, ErrorKind::ShapeMismatch,
            "image value count does not match " + std::to_string(height) + "x" +
                std::to_string(width) + "x" + std::to_string(channels));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  ValueRange value_range() const noexcept { return range_; }
  Rect bounds() const noexcept { return {0, 0, width_, height_}; }

  T& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return values_[(y * width_ + x) * channels_ + c];
  }
  const T& at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return values_[(y * width_ + x) * channels_ + c];
  }
  /// All channels of one pixel.
  std::span<T> pixel(std::size_t y, std::size_t x) noexcept {
    return {values_.data() + (y * width_ + x) * channels_, channels_};
  }
  std::span<const T> pixel(std::size_t y, std::size_t x) const noexcept {
    return {values_.data() + (y * width_ + x) * channels_, channels_};
  }

  std::vector<T>& values() noexcept { return values_; }
  const std::vector<T>& values() const noexcept { return values_; }

  friend bool operator==(const BasicImage& a, const BasicImage& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.channels_ == b.channels_ &&
           a.range_ == b.range_ && a.values_ == b.values_;
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  ValueRange range_ = ValueRange::UnitFloat;
  std::vector<T> values_;
};

using ImageTensor = BasicImage<float>;
using ByteImage = BasicImage<std::uint8_t>;

/// Packs equally-sized images into an NCHW batch.
template <typename T, typename P>
Tensor<T> to_batch(std::span<const BasicImage<P>> images) {
  require(!images.empty(), ErrorKind::EmptyBatch, "no images to batch");
  const auto& first = images.front();
  Tensor<T> out(images.size(), first.channels(), first.height(), first.width());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    require(img.height() == first.height() && img.width() == first.width() &&
                img.channels() == first.channels(),
            ErrorKind::ShapeMismatch, "batch images differ in size");
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < img.width(); ++x)
        for (std::size_t c = 0; c < img.channels(); ++c)
          out.at(i, c, y, x) = static_cast<T>(img.at(y, x, c));
  }
  return out;
}

template <typename T, typename P>
Tensor<T> to_batch(const BasicImage<P>& image) {
  return to_batch<T, P>(std::span<const BasicImage<P>>(&image, 1));
}

}  // namespace rmgpmsi
