#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "anomex/raster_io.hpp"
#include "test_support.hpp"

using namespace anomex;
using anomex::fixture::TempDir;

TEST(Png, RgbRoundTripAt8Bits) {
  TempDir dir("png");
  std::mt19937_64 rng(1);
  const RgbImage img = fixture::quantized(fixture::random_image(9, 13, rng));
  save_png(dir.path() / "a.png", img);
  const RgbImage back = load_png(dir.path() / "a.png");
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data().size(); ++i) EXPECT_DOUBLE_EQ(back.data()[i], img.data()[i]);
}

TEST(Png, GrayIsReplicated) {
  TempDir dir("png");
  ScalarMap g(2, 2, 0.0);
  g(1, 1) = 1.0;
  save_png_gray(dir.path() / "g.png", g);
  const RgbImage img = load_png(dir.path() / "g.png");
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(img(1, 1, c), 1.0);
    EXPECT_EQ(img(0, 1, c), 0.0);
  }
}

TEST(Png, SixteenBitLabels) {
  TempDir dir("png");
  const std::vector<std::uint16_t> v{0, 1, 300, 65535, 42, 7};
  save_png_gray16(dir.path() / "l.png", 2, 3, v);
  std::size_t h = 0, w = 0;
  EXPECT_EQ(load_png_gray16(dir.path() / "l.png", h, w), v);
  EXPECT_EQ(h, 2u);
  EXPECT_EQ(w, 3u);
}

TEST(Png, MaskThresholdIsAnyPositive) {
  TempDir dir("png");
  RgbImage img(1, 3, 0.0);
  img(0, 1, 2) = 1.0 / 255.0;
  save_png(dir.path() / "m.png", img);
  const BinaryMask m = load_png_mask(dir.path() / "m.png");
  EXPECT_EQ(m(0, 0), 0);
  EXPECT_EQ(m(0, 1), 1);
  EXPECT_EQ(m(0, 2), 0);
}

TEST(Png, CorruptFileNamesPath) {
  TempDir dir("png");
  const auto path = dir.path() / "bad.png";
  std::ofstream(path) << "not a png";
  try {
    load_png(path);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.png"), std::string::npos);
  }
  EXPECT_THROW(load_png(dir.path() / "missing.png"), IoError);
}

TEST(F32, RoundTripWithinFloatPrecision) {
  TempDir dir("f32");
  std::mt19937_64 rng(2);
  const RgbImage img = fixture::random_image(5, 4, rng);
  save_f32(dir.path() / "r.f32", img);
  const auto back = load_f32<RgbImage>(dir.path() / "r.f32");
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    EXPECT_EQ(back.data()[i], static_cast<double>(static_cast<float>(img.data()[i])));
  }
}

TEST(F32, HeaderAndLittleEndianLayout) {
  TempDir dir("f32");
  ScalarMap m(1, 2, 0.0);
  m(0, 0) = 1.0;
  m(0, 1) = -2.0;
  save_f32(dir.path() / "m.f32", m);
  std::ifstream in(dir.path() / "m.f32", std::ios::binary);
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::string header = "ANXF32 1 2 1\n";
  ASSERT_EQ(bytes.size(), header.size() + 8);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  // 1.0f = 0x3f800000, -2.0f = 0xc0000000, little-endian.
  const std::string payload = bytes.substr(header.size());
  EXPECT_EQ(payload, std::string("\x00\x00\x80\x3f\x00\x00\x00\xc0", 8));
}

TEST(F32, ChannelMismatchAndTruncation) {
  TempDir dir("f32");
  save_f32(dir.path() / "m.f32", ScalarMap(2, 2, 0.5));
  EXPECT_THROW(load_f32<RgbImage>(dir.path() / "m.f32"), IoError);
  std::ofstream(dir.path() / "t.f32", std::ios::binary) << "ANXF32 2 2 1\n\x01\x02";
  EXPECT_THROW(load_f32<ScalarMap>(dir.path() / "t.f32"), IoError);
}

TEST(Heatmap, EndpointsAndDegenerateRange) {
  EXPECT_EQ(heat_color(0.0), (std::array<std::uint8_t, 3>{0, 0, 128}));
  EXPECT_EQ(heat_color(1.0), (std::array<std::uint8_t, 3>{255, 0, 0}));
  const Rgb8Image flat = heatmap(ScalarMap(2, 2, 3.0));
  for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(flat.at_pixel(p, 2), 128);
}
