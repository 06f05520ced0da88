#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "anomex/error.hpp"
#include "anomex/evaluation.hpp"
#include "anomex/image.hpp"
#include "anomex/raster_io.hpp"

namespace anomex::render {

// Overlay palette.
inline constexpr std::array<std::uint8_t, 3> kTruePositive{0, 255, 0};
inline constexpr std::array<std::uint8_t, 3> kFalsePositive{255, 0, 0};
inline constexpr std::array<std::uint8_t, 3> kFalseNegative{0, 0, 255};
inline constexpr std::array<std::uint8_t, 3> kBoundary{255, 255, 0};

inline constexpr std::size_t kTiles = 8;
inline constexpr std::size_t kGap = 2;
inline constexpr std::size_t kCaption = 11;

namespace detail {

struct Glyph {
  char ch;
  std::array<std::uint8_t, 7> rows;  // 5 bits per row, MSB on the left
};

// clang-format off
inline constexpr std::array<Glyph, 26> kFont{{
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
}};
// clang-format on

inline const Glyph* find_glyph(char c) {
  for (const auto& g : kFont) {
    if (g.ch == c) return &g;
  }
  return nullptr;
}

inline void put(Rgb8Image& img, std::size_t y, std::size_t x, const std::array<std::uint8_t, 3>& rgb) {
  if (y >= img.height() || x >= img.width()) return;
  for (std::size_t c = 0; c < 3; ++c) img(y, x, c) = rgb[c];
}

inline void blit(Rgb8Image& dst, const Rgb8Image& tile, std::size_t y0, std::size_t x0) {
  for (std::size_t y = 0; y < tile.height(); ++y) {
    for (std::size_t x = 0; x < tile.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) dst(y0 + y, x0 + x, c) = tile(y, x, c);
    }
  }
}

inline Rgb8Image to_rgb8(const RgbImage& img) {
  Rgb8Image out(img.height(), img.width());
  for (std::size_t i = 0; i < img.data().size(); ++i) out.data()[i] = anomex::detail::to_byte(img.data()[i]);
  return out;
}

inline Rgb8Image filled(std::size_t h, std::size_t w, std::uint8_t v) { return Rgb8Image(h, w, v); }

// Dimmed gray base; equal channels never collide with the overlay palette.
inline Rgb8Image dimmed_gray(const RgbImage& img) {
  const ScalarMap gray = to_gray_max(img);
  Rgb8Image out(img.height(), img.width());
  for (std::size_t p = 0; p < gray.pixel_count(); ++p) {
    const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(gray.at_pixel(p), 0.0, 1.0) * 127.0));
    for (std::size_t c = 0; c < 3; ++c) out.at_pixel(p, c) = g;
  }
  return out;
}

inline Rgb8Image overlay(const RgbImage& base, const evaluation::LocalizationResult& loc) {
  Rgb8Image out = dimmed_gray(base);
  for (std::size_t p = 0; p < out.pixel_count(); ++p) {
    const std::array<std::uint8_t, 3>* color = nullptr;
    if (loc.tp_mask.at_pixel(p)) color = &kTruePositive;
    if (loc.fp_mask.at_pixel(p)) color = &kFalsePositive;
    if (loc.fn_mask.at_pixel(p)) color = &kFalseNegative;
    if (color) {
      for (std::size_t c = 0; c < 3; ++c) out.at_pixel(p, c) = (*color)[c];
    }
  }
  return out;
}

inline Rgb8Image boundary(const RgbImage& base, const BinaryMask& gt) {
  Rgb8Image out = to_rgb8(base);
  const std::size_t h = gt.height(), w = gt.width();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!gt(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w || !gt(y - 1, x) || !gt(y + 1, x) ||
                        !gt(y, x - 1) || !gt(y, x + 1);
      if (edge) put(out, y, x, kBoundary);
    }
  }
  return out;
}

}  // namespace detail

/// Draws text with the built-in 5x7 font; unknown characters render blank.
inline void draw_text(Rgb8Image& img, std::size_t y, std::size_t x, std::string_view text,
                      const std::array<std::uint8_t, 3>& rgb = {255, 255, 255}) {
  for (char ch : text) {
    if (const auto* g = detail::find_glyph(ch)) {
      for (std::size_t r = 0; r < 7; ++r) {
        for (std::size_t c = 0; c < 5; ++c) {
          if (g->rows[r] & (0x10 >> c)) detail::put(img, y + r, x + c, rgb);
        }
      }
    }
    x += 6;
  }
}

inline std::string format_j(const std::optional<evaluation::LocalizationResult>& loc) {
  if (!loc) return "-";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3f", loc->j_star);
  return buf;
}

struct PanelInputs {
  const RgbImage& sample;
  const RgbImage& recon;
  const ScalarMap& anomaly;
  std::optional<ScalarMap> beta_lime;
  std::optional<ScalarMap> beta_shap;
  std::optional<evaluation::LocalizationResult> loc_lime;
  std::optional<evaluation::LocalizationResult> loc_shap;
  std::optional<BinaryMask> gt;
};

/// Column of the top-left pixel of tile i.
inline std::size_t tile_x(std::size_t i, std::size_t tile_width) { return i * (tile_width + kGap); }

/// One row of 8 tiles: sample, reconstruction, anomaly map, beta_L, beta_S,
/// LIME overlay, SHAP overlay, ground-truth boundary. A caption strip under
/// the tiles carries the labels and the J values.
inline Rgb8Image render_panels(const PanelInputs& in) {
  const std::size_t h = in.sample.height();
  const std::size_t w = in.sample.width();
  require_same_shape(in.sample, in.recon, "render_panels");
  require_same_shape(in.sample, in.anomaly, "render_panels");
  if (in.beta_lime) require_same_shape(in.sample, *in.beta_lime, "render_panels");
  if (in.beta_shap) require_same_shape(in.sample, *in.beta_shap, "render_panels");
  if (in.gt) require_same_shape(in.sample, *in.gt, "render_panels");
  for (const auto* loc : {&in.loc_lime, &in.loc_shap}) {
    if (*loc) require_same_shape(in.sample, (*loc)->tp_mask, "render_panels");
  }

  Rgb8Image canvas(h + kCaption, kTiles * w + (kTiles - 1) * kGap, 0);
  const std::uint8_t missing = 48;
  double m_max = 0.0;
  for (double v : in.anomaly.data()) m_max = std::max(m_max, v);

  detail::blit(canvas, detail::to_rgb8(in.sample), 0, tile_x(0, w));
  detail::blit(canvas, detail::to_rgb8(in.recon), 0, tile_x(1, w));
  detail::blit(canvas, heatmap(in.anomaly, 0.0, m_max), 0, tile_x(2, w));
  detail::blit(canvas, in.beta_lime ? heatmap(*in.beta_lime) : detail::filled(h, w, missing), 0, tile_x(3, w));
  detail::blit(canvas, in.beta_shap ? heatmap(*in.beta_shap) : detail::filled(h, w, missing), 0, tile_x(4, w));
  detail::blit(canvas, in.loc_lime ? detail::overlay(in.sample, *in.loc_lime) : detail::filled(h, w, missing), 0,
               tile_x(5, w));
  detail::blit(canvas, in.loc_shap ? detail::overlay(in.sample, *in.loc_shap) : detail::filled(h, w, missing), 0,
               tile_x(6, w));
  detail::blit(canvas, in.gt ? detail::boundary(in.sample, *in.gt) : detail::to_rgb8(in.sample), 0, tile_x(7, w));

  const std::array<std::string, kTiles> captions{
      "IN", "REC", "M", "BL", "BS", "JL=" + format_j(in.loc_lime), "JS=" + format_j(in.loc_shap), "GT"};
  for (std::size_t i = 0; i < kTiles; ++i) draw_text(canvas, h + 2, tile_x(i, w) + 1, captions[i]);
  return canvas;
}

inline void write_panels(const std::filesystem::path& path, const PanelInputs& in) {
  save_png(path, render_panels(in));
}

}  // namespace anomex::render
