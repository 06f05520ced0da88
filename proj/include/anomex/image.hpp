#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "anomex/error.hpp"

namespace anomex {

/// Dense row-major raster with a compile-time channel count. Pixel (y, x)
/// channel c lives at index (y * width + x) * Channels + c.
template <typename T, std::size_t Channels>
class Raster {
 public:
  using value_type = T;
  static constexpr std::size_t channels = Channels;

  Raster() = default;

  Raster(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), data_(height * width * Channels, fill) {}

  Raster(std::size_t height, std::size_t width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != height_ * width_ * Channels) {
      throw ShapeError("raster data size " + std::to_string(data_.size()) + " does not match " +
                       std::to_string(height_) + "x" + std::to_string(width_) + "x" +
                       std::to_string(Channels));
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return height_ * width_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t y, std::size_t x, std::size_t c = 0) {
    return data_[(y * width_ + x) * Channels + c];
  }
  const T& operator()(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data_[(y * width_ + x) * Channels + c];
  }

  // Flat pixel index p = y * width + x.
  T& at_pixel(std::size_t p, std::size_t c = 0) { return data_[p * Channels + c]; }
  const T& at_pixel(std::size_t p, std::size_t c = 0) const { return data_[p * Channels + c]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  template <typename U, std::size_t C>
  bool same_shape(const Raster<U, C>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

/// Normalized RGB image, intensities in [0,1]. Houses inputs and reconstructions.
using RgbImage = Raster<double, 3>;
/// Per-pixel real map: anomaly maps and pixel attributions.
using ScalarMap = Raster<double, 1>;
/// Per-pixel boolean; stored as bytes (0 or 1) to keep contiguous access.
using BinaryMask = Raster<std::uint8_t, 1>;

inline std::string shape_string(std::size_t h, std::size_t w) {
  return std::to_string(h) + "x" + std::to_string(w);
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.height(), a.width()) +
                     " vs " + shape_string(b.height(), b.width()));
  }
}

/// Throws unless the image is non-empty and every value lies in [0,1].
inline void validate(const RgbImage& img) {
  if (img.height() == 0 || img.width() == 0) throw ShapeError("image has zero extent");
  for (double v : img.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("image intensity outside [0,1]");
  }
}

inline std::size_t count(const BinaryMask& mask) {
  return static_cast<std::size_t>(std::count_if(mask.data().begin(), mask.data().end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

/// Channel-max grayscale: gs(img)[p] = max over the three channels.
inline ScalarMap to_gray_max(const RgbImage& img) {
  ScalarMap out(img.height(), img.width());
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    out.at_pixel(p) = std::max({img.at_pixel(p, 0), img.at_pixel(p, 1), img.at_pixel(p, 2)});
  }
  return out;
}

/// Anomaly reconstruction error map m = |gs(input) - gs(recon)|.
inline ScalarMap anomaly_map(const RgbImage& input, const RgbImage& recon) {
  require_same_shape(input, recon, "anomaly_map");
  const ScalarMap a = to_gray_max(input);
  const ScalarMap b = to_gray_max(recon);
  ScalarMap m(input.height(), input.width());
  for (std::size_t p = 0; p < m.pixel_count(); ++p) m.at_pixel(p) = std::abs(a.at_pixel(p) - b.at_pixel(p));
  return m;
}

/// Anomaly score alpha = max(m).
inline double anomaly_score(const ScalarMap& m) {
  if (m.empty()) throw InvalidArgument("anomaly_score: empty map");
  return *std::max_element(m.data().begin(), m.data().end());
}

/// Mean squared error over all h*w*3 entries.
inline double mse(const RgbImage& a, const RgbImage& b) {
  require_same_shape(a, b, "mse");
  if (a.empty()) throw InvalidArgument("mse: empty image");
  const auto da = a.data();
  const auto db = b.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double r = da[i] - db[i];
    sum += r * r;
  }
  return sum / static_cast<double>(da.size());
}

}  // namespace anomex
