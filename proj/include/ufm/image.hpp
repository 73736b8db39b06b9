#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "ufm/common.hpp"

namespace ufm {

/// Dense row-major H x W grid.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int u, int v) { return data_[static_cast<std::size_t>(v) * width_ + u]; }
  const T& operator()(int u, int v) const { return data_[static_cast<std::size_t>(v) * width_ + u]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> pixels() noexcept { return data_; }
  std::span<const T> pixels() const noexcept { return data_; }

  bool same_shape(const Image& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

/// Depth in meters; 0 or NaN marks an invalid pixel.
using DepthMap = Image<float>;
/// Variance in meters^2; NaN marks an invalid pixel.
using VarianceMap = Image<float>;

inline constexpr float kInvalid = std::numeric_limits<float>::quiet_NaN();

inline bool valid_depth(float d) noexcept { return std::isfinite(d) && d > 0.0f; }

inline std::size_t count_valid(const DepthMap& depth) {
  std::size_t n = 0;
  for (float d : depth.pixels()) n += valid_depth(d) ? 1 : 0;
  return n;
}

template <typename T, typename U>
void require_same_shape(const Image<T>& a, const Image<U>& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(ErrorCode::ShapeMismatch, what);
  }
}

}  // namespace ufm
