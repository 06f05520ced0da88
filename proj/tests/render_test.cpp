#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "anomex/evaluation.hpp"
#include "anomex/render.hpp"
#include "test_support.hpp"

using namespace anomex;
using namespace anomex::render;

namespace {

std::size_t count_color(const Rgb8Image& img, std::size_t x0, std::size_t w, std::size_t h,
                        const std::array<std::uint8_t, 3>& rgb) {
  std::size_t n = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = x0; x < x0 + w; ++x) {
      n += img(y, x, 0) == rgb[0] && img(y, x, 1) == rgb[1] && img(y, x, 2) == rgb[2];
    }
  }
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Render, Layout) {
  const RgbImage img(16, 20, 0.5);
  const ScalarMap m(16, 20, 0.0);
  const Rgb8Image canvas = render_panels({img, img, m, {}, {}, {}, {}, {}});
  EXPECT_EQ(canvas.height(), 16 + kCaption);
  EXPECT_EQ(canvas.width(), 8 * 20 + 7 * kGap);
  EXPECT_EQ(tile_x(7, 20), 7u * 22u);
}

TEST(Render, AllZeroInputsWithGt) {
  const RgbImage img(12, 12, 0.0);
  const ScalarMap zero(12, 12, 0.0);
  BinaryMask gt(12, 12);
  gt(3, 3) = 1;
  const auto loc = evaluation::optimal_jaccard(zero, gt);
  EXPECT_EQ(format_j(loc), "0.007");  // full mask: 1/144
  const auto none = evaluation::localization_at(zero, gt, 1.0);
  EXPECT_EQ(format_j(none), "0.000");
  EXPECT_EQ(format_j(std::nullopt), "-");
  EXPECT_NO_THROW(render_panels({img, img, zero, zero, zero, none, none, gt}));
}

TEST(Render, OverlayCensusMatchesMasks) {
  std::mt19937_64 rng(1);
  const RgbImage img = fixture::random_image(24, 24, rng);
  const ScalarMap beta = fixture::random_map(24, 24, rng);
  BinaryMask gt(24, 24);
  for (std::size_t y = 4; y < 14; ++y) {
    for (std::size_t x = 6; x < 18; ++x) gt(y, x) = 1;
  }
  const auto loc_l = evaluation::optimal_jaccard(beta, gt);
  const auto loc_s = evaluation::localization_at(beta, gt, 0.5);
  const ScalarMap m = anomaly_map(img, img);
  const Rgb8Image canvas = render_panels({img, img, m, beta, beta, loc_l, loc_s, gt});
  const std::size_t h = 24, w = 24;
  for (const auto& [tile, loc] : {std::pair{5, &loc_l}, std::pair{6, &loc_s}}) {
    const std::size_t x0 = tile_x(tile, w);
    EXPECT_EQ(count_color(canvas, x0, w, h, kTruePositive), count(loc->tp_mask));
    EXPECT_EQ(count_color(canvas, x0, w, h, kFalsePositive), count(loc->fp_mask));
    EXPECT_EQ(count_color(canvas, x0, w, h, kFalseNegative), count(loc->fn_mask));
  }
}

TEST(Render, GoldenBytesAreStable) {
  std::mt19937_64 rng(2);
  const RgbImage img = fixture::random_image(16, 16, rng);
  const RgbImage rec = fixture::random_image(16, 16, rng);
  const ScalarMap m = anomaly_map(img, rec);
  BinaryMask gt(16, 16);
  gt(5, 5) = gt(5, 6) = 1;
  const auto loc = evaluation::optimal_jaccard(m, gt);
  fixture::TempDir dir("render");
  write_panels(dir.path() / "a.png", {img, rec, m, m, m, loc, loc, gt});
  write_panels(dir.path() / "b.png", {img, rec, m, m, m, loc, loc, gt});
  EXPECT_EQ(slurp(dir.path() / "a.png"), slurp(dir.path() / "b.png"));
}

TEST(Render, ShapeMismatch) {
  const RgbImage img(8, 8, 0.0);
  const ScalarMap m(8, 9, 0.0);
  EXPECT_THROW(render_panels({img, img, m, {}, {}, {}, {}, {}}), ShapeError);
}

TEST(Render, TextUsesFont) {
  Rgb8Image canvas(10, 20, 0);
  draw_text(canvas, 1, 1, "J=0.5");
  std::size_t lit = 0;
  for (auto v : canvas.data()) lit += v == 255;
  EXPECT_GT(lit, 0u);
  Rgb8Image blank(10, 20, 0);
  draw_text(blank, 1, 1, "~~");
  for (auto v : blank.data()) EXPECT_EQ(v, 0);
}
