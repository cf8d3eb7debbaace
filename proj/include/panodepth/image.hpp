#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "panodepth/error.hpp"

namespace panodepth {

// Row-major interleaved raster: element (u, v, ch) lives at (v * width + u) * channels + ch.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, T fill = T{})
      : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0 || channels < 1) {
      throw ShapeError("invalid image dimensions");
    }
    pixels_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return pixels_.size(); }

  T& at(int u, int v, int ch = 0) { return pixels_[index(u, v, ch)]; }
  const T& at(int u, int v, int ch = 0) const { return pixels_[index(u, v, ch)]; }

  std::vector<T>& data() noexcept { return pixels_; }
  const std::vector<T>& data() const noexcept { return pixels_; }

  bool same_shape(const Image& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int u, int v, int ch) const noexcept {
    return (static_cast<std::size_t>(v) * width_ + u) * channels_ + ch;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> pixels_;
};

using ColorImage = Image<float>;     // RGB in [0, 1]
using DepthMap = Image<float>;       // radius in meters
using ValidityMask = Image<std::uint8_t>;  // 0 or 1
using Image8 = Image<std::uint8_t>;

}  // namespace panodepth
