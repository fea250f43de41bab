#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sraw/error.hpp"

namespace sraw {

/// Dense row-major 2-D grid. Pixel (r, c) sits at real coordinate (u = r, v = c).
template <typename T>
class Grid {
public:
  Grid() = default;
  Grid(std::size_t height, std::size_t width, T fill = T{}) : height_(height), width_(width), data_(height * width, fill) {}
  Grid(std::size_t height, std::size_t width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != height_ * width_)
      throw InvalidInput("grid data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(height_) + "x" + std::to_string(width_));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool same_shape(const Grid& o) const noexcept { return height_ == o.height_ && width_ == o.width_; }
  template <typename U>
  bool same_shape(const Grid<U>& o) const noexcept {
    return height_ == o.height() && width_ == o.width();
  }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * width_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * width_ + c]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  bool operator==(const Grid&) const = default;

private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

using RealGrid = Grid<double>;
using Mask = Grid<std::uint8_t>;

/// Intensity image with every value in [0, 1].
class GrayImage {
public:
  GrayImage() = default;
  GrayImage(std::size_t height, std::size_t width, double fill = 0.0) : pixels_(height, width, fill) { validate(); }
  explicit GrayImage(RealGrid pixels) : pixels_(std::move(pixels)) { validate(); }
  GrayImage(std::size_t height, std::size_t width, std::vector<double> data) : pixels_(height, width, std::move(data)) {
    validate();
  }

  std::size_t height() const noexcept { return pixels_.height(); }
  std::size_t width() const noexcept { return pixels_.width(); }
  std::size_t size() const noexcept { return pixels_.size(); }
  double operator()(std::size_t r, std::size_t c) const noexcept { return pixels_(r, c); }
  double operator[](std::size_t i) const noexcept { return pixels_[i]; }
  std::span<const double> data() const noexcept { return pixels_.data(); }
  const RealGrid& grid() const noexcept { return pixels_; }
  operator const RealGrid&() const noexcept { return pixels_; }

  bool operator==(const GrayImage&) const = default;

private:
  void validate() const {
    for (double v : pixels_.data())
      if (!(v >= 0.0 && v <= 1.0))
        throw InvalidInput("intensity " + std::to_string(v) + " outside [0,1]");
  }

  RealGrid pixels_;
};

struct Coord {
  double u = 0.0; ///< row
  double v = 0.0; ///< column
};

struct Sample {
  double value = 0.0;
  double du = 0.0;
  double dv = 0.0;
};

namespace detail {

// Keys cubic convolution weights (a = -0.5) for fractional offset t in [0,1)
// at taps -1, 0, 1, 2, plus their derivatives in t.
inline void keys_weights(double t, double w[4], double dw[4]) noexcept {
  const double t2 = t * t;
  const double t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2.0 * t2 - t);
  w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
  w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
  dw[0] = 0.5 * (-3.0 * t2 + 4.0 * t - 1.0);
  dw[1] = 0.5 * (9.0 * t2 - 10.0 * t);
  dw[2] = 0.5 * (-9.0 * t2 + 8.0 * t + 1.0);
  dw[3] = 0.5 * (3.0 * t2 - 2.0 * t);
}

// Beyond [-3, n+2] every tap clamps to the same edge pixel, so clamping the
// coordinate there leaves value and derivative unchanged.
inline void split_coord(double x, std::size_t n, long idx[4], double& t) noexcept {
  const double lo = -3.0;
  const double hi = static_cast<double>(n) + 2.0;
  x = std::clamp(x, lo, hi);
  const double f = std::floor(x);
  t = x - f;
  const long base = static_cast<long>(f);
  const long last = static_cast<long>(n) - 1;
  for (int k = 0; k < 4; ++k)
    idx[k] = std::clamp(base - 1 + k, 0L, last);
}

} // namespace detail

/// Catmull-Rom bicubic sample with analytic partials; taps outside the image replicate the edge.
inline Sample sample_bicubic(const RealGrid& img, Coord at) {
  if (!std::isfinite(at.u) || !std::isfinite(at.v))
    throw InvalidInput("sample_bicubic: non-finite coordinate");
  if (img.size() == 0)
    throw InvalidInput("sample_bicubic: empty image");
  long ri[4], ci[4];
  double tu, tv;
  detail::split_coord(at.u, img.height(), ri, tu);
  detail::split_coord(at.v, img.width(), ci, tv);
  double wu[4], dwu[4], wv[4], dwv[4];
  detail::keys_weights(tu, wu, dwu);
  detail::keys_weights(tv, wv, dwv);

  Sample s;
  for (int a = 0; a < 4; ++a) {
    const double* row = &img(static_cast<std::size_t>(ri[a]), 0);
    double acc = 0.0, dacc = 0.0;
    for (int b = 0; b < 4; ++b) {
      const double p = row[ci[b]];
      acc += wv[b] * p;
      dacc += dwv[b] * p;
    }
    s.value += wu[a] * acc;
    s.du += dwu[a] * acc;
    s.dv += wu[a] * dacc;
  }
  return s;
}

inline GrayImage clip_unit(const RealGrid& img) {
  std::vector<double> out(img.data().begin(), img.data().end());
  for (double& v : out) {
    if (!std::isfinite(v))
      throw InvalidInput("clip_unit: non-finite intensity");
    v = std::clamp(v, 0.0, 1.0);
  }
  return GrayImage(img.height(), img.width(), std::move(out));
}

} // namespace sraw
