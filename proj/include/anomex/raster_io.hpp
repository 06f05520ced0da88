#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "anomex/error.hpp"
#include "anomex/image.hpp"

namespace anomex {

/// 8-bit RGB raster used for rendered output (heatmaps, panels).
using Rgb8Image = Raster<std::uint8_t, 3>;

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

// Decoded PNG as 8- or 16-bit samples, 1 or 3 channels (alpha stripped).
struct DecodedPng {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

inline DecodedPng decode_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  std::array<unsigned char, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), file.get()) != sig.size() || png_sig_cmp(sig.data(), 0, 8) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  DecodedPng out;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);

  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (out.channels != 1 && out.channels != 3) throw IoError("unsupported PNG channel layout: " + path.string());
  const std::size_t n = out.height * out.width * out.channels;
  out.samples.resize(n);
  if (out.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint16_t v;
      std::memcpy(&v, buffer.data() + 2 * i, 2);
      out.samples[i] = v;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = buffer[i];
  }
  return out;
}

// color_type: PNG_COLOR_TYPE_RGB or PNG_COLOR_TYPE_GRAY; depth 8 or 16.
inline void encode_png(const std::filesystem::path& path, std::size_t height, std::size_t width, int color_type,
                       int depth, const std::vector<unsigned char>& bytes) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  const std::size_t channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t rowbytes = width * channels * static_cast<std::size_t>(depth / 8);
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<unsigned char*>(bytes.data()) + y * rowbytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// Loads an 8/16-bit RGB or grayscale PNG, normalized to [0,1]. Gray is
/// replicated across the three channels.
inline RgbImage load_png(const std::filesystem::path& path) {
  const detail::DecodedPng png = detail::decode_png(path);
  const double scale = png.bit_depth == 16 ? 65535.0 : 255.0;
  RgbImage img(png.height, png.width);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t src = png.channels == 3 ? p * 3 + c : p;
      img.at_pixel(p, c) = png.samples[src] / scale;
    }
  }
  return img;
}

/// Loads a PNG as a mask: a pixel is true when any channel is > 0.
inline BinaryMask load_png_mask(const std::filesystem::path& path) {
  const detail::DecodedPng png = detail::decode_png(path);
  BinaryMask mask(png.height, png.width);
  for (std::size_t p = 0; p < mask.pixel_count(); ++p) {
    bool on = false;
    for (std::size_t c = 0; c < png.channels; ++c) on = on || png.samples[p * png.channels + c] > 0;
    mask.at_pixel(p) = on ? 1 : 0;
  }
  return mask;
}

inline void save_png(const std::filesystem::path& path, const RgbImage& img) {
  std::vector<unsigned char> bytes(img.data().size());
  std::transform(img.data().begin(), img.data().end(), bytes.begin(), detail::to_byte);
  detail::encode_png(path, img.height(), img.width(), PNG_COLOR_TYPE_RGB, 8, bytes);
}

inline void save_png(const std::filesystem::path& path, const Rgb8Image& img) {
  std::vector<unsigned char> bytes(img.data().begin(), img.data().end());
  detail::encode_png(path, img.height(), img.width(), PNG_COLOR_TYPE_RGB, 8, bytes);
}

/// 8-bit grayscale PNG of a map whose values lie in [0,1] (clamped).
inline void save_png_gray(const std::filesystem::path& path, const ScalarMap& map) {
  std::vector<unsigned char> bytes(map.data().size());
  std::transform(map.data().begin(), map.data().end(), bytes.begin(), detail::to_byte);
  detail::encode_png(path, map.height(), map.width(), PNG_COLOR_TYPE_GRAY, 8, bytes);
}

inline void save_png_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<unsigned char> bytes(mask.data().size());
  std::transform(mask.data().begin(), mask.data().end(), bytes.begin(),
                 [](std::uint8_t v) -> unsigned char { return v ? 255 : 0; });
  detail::encode_png(path, mask.height(), mask.width(), PNG_COLOR_TYPE_GRAY, 8, bytes);
}

/// 16-bit grayscale PNG; values are written big-endian as PNG requires.
inline void save_png_gray16(const std::filesystem::path& path, std::size_t height, std::size_t width,
                            const std::vector<std::uint16_t>& values) {
  if (values.size() != height * width) throw ShapeError("save_png_gray16: size mismatch");
  std::vector<unsigned char> bytes(values.size() * 2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    bytes[2 * i] = static_cast<unsigned char>(values[i] >> 8);
    bytes[2 * i + 1] = static_cast<unsigned char>(values[i] & 0xff);
  }
  detail::encode_png(path, height, width, PNG_COLOR_TYPE_GRAY, 16, bytes);
}

inline std::vector<std::uint16_t> load_png_gray16(const std::filesystem::path& path, std::size_t& height,
                                                  std::size_t& width) {
  const detail::DecodedPng png = detail::decode_png(path);
  if (png.channels != 1) throw IoError("expected grayscale PNG: " + path.string());
  height = png.height;
  width = png.width;
  return png.samples;
}

// ---------------------------------------------------------------------------
// Raw float rasters: one ASCII header line "ANXF32 <height> <width> <channels>\n"
// followed by height*width*channels little-endian IEEE-754 float32 values in
// row-major, channel-interleaved order.

namespace detail {

inline void write_f32(const std::filesystem::path& path, std::size_t h, std::size_t w, std::size_t c,
                      std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ANXF32 " << h << ' ' << w << ' ' << c << '\n';
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<double> read_f32(const std::filesystem::path& path, std::size_t& h, std::size_t& w,
                                    std::size_t& c) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string magic;
  if (!(hs >> magic >> h >> w >> c) || magic != "ANXF32") throw IoError("bad float raster header: " + path.string());
  const std::size_t n = h * w * c;
  std::vector<unsigned char> bytes(n * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw IoError("truncated float raster: " + path.string());
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

}  // namespace detail

template <std::size_t C>
void save_f32(const std::filesystem::path& path, const Raster<double, C>& raster) {
  detail::write_f32(path, raster.height(), raster.width(), C, raster.data());
}

template <typename RasterT>
RasterT load_f32(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0, c = 0;
  std::vector<double> values = detail::read_f32(path, h, w, c);
  if (c != RasterT::channels) {
    throw IoError("float raster " + path.string() + " has " + std::to_string(c) + " channels, expected " +
                  std::to_string(RasterT::channels));
  }
  return RasterT(h, w, std::move(values));
}

// ---------------------------------------------------------------------------
// False-color rendering

/// Piecewise-linear blue-cyan-yellow-red ramp for t in [0,1].
inline std::array<std::uint8_t, 3> heat_color(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {0.0, 0.0, 0.5}, {0.0, 0.4, 1.0}, {0.0, 1.0, 1.0}, {1.0, 1.0, 0.0}, {1.0, 0.0, 0.0}}};
  const double s = t * (stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(s), stops.size() - 2);
  const double f = s - static_cast<double>(i);
  std::array<std::uint8_t, 3> rgb{};
  for (std::size_t c = 0; c < 3; ++c) rgb[c] = detail::to_byte(stops[i][c] * (1 - f) + stops[i + 1][c] * f);
  return rgb;
}

/// Heatmap over [lo, hi]; a degenerate range maps everything to the low color.
inline Rgb8Image heatmap(const ScalarMap& map, double lo, double hi) {
  Rgb8Image out(map.height(), map.width());
  const double span = hi - lo;
  for (std::size_t p = 0; p < map.pixel_count(); ++p) {
    const double t = span > 0 ? (map.at_pixel(p) - lo) / span : 0.0;
    const auto rgb = heat_color(t);
    for (std::size_t c = 0; c < 3; ++c) out.at_pixel(p, c) = rgb[c];
  }
  return out;
}

/// Heatmap scaled to the map's own value range.
inline Rgb8Image heatmap(const ScalarMap& map) {
  if (map.empty()) return {};
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  return heatmap(map, *lo, *hi);
}

}  // namespace anomex
