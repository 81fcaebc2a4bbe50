#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace pmvs {

// Dense row-major H x W x C buffer. Channels are interleaved per pixel.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, int channels = 1, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    assert(width >= 0 && height >= 0 && channels >= 1);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * height_;
  }
  bool empty() const { return data_.empty(); }

  bool in_bounds(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  std::size_t index(int x, int y, int c = 0) const {
    assert(in_bounds(x, y) && c >= 0 && c < channels_);
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  T& operator()(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& operator()(int x, int y, int c = 0) const {
    return data_[index(x, y, c)];
  }

  std::span<T> pixel(int x, int y) {
    return {data_.data() + index(x, y), static_cast<std::size_t>(channels_)};
  }
  std::span<const T> pixel(int x, int y) const {
    return {data_.data() + index(x, y), static_cast<std::size_t>(channels_)};
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Grid& other) const {
    return width_ == other.width_ && height_ == other.height_ &&
           channels_ == other.channels_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

}  // namespace pmvs
