#include <gtest/gtest.h>

#include <random>
#include <set>

#include "anomex/segmentation.hpp"
#include "test_support.hpp"

using namespace anomex;
using anomex::fixture::TempDir;
using anomex::fixture::uniform_image;

namespace {

RgbImage two_halves(std::size_t side) {
  RgbImage img(side, side, 0.0);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = side / 2; x < side; ++x) {
      for (std::size_t c = 0; c < 3; ++c) img(y, x, c) = 1.0;
    }
  }
  return img;
}

}  // namespace

TEST(SegmentMap, CompactsByFirstAppearance) {
  const SegmentMap s = SegmentMap::from_labels(2, 2, {7, 3, 7, 9});
  EXPECT_EQ(s.k(), 3u);
  EXPECT_EQ(s.labels(), (std::vector<int>{0, 1, 0, 2}));
  EXPECT_EQ(s.sizes(), (std::vector<std::size_t>{2, 1, 1}));
  EXPECT_THROW(SegmentMap::from_labels(2, 2, {1, 2, 3}), ShapeError);
}

TEST(Quickshift, UniformImageIsOneSegment) {
  QuickshiftParams p;
  p.max_dist = 32.0;  // > 16*sqrt(2)
  const SegmentMap s = quickshift(uniform_image(16, 16, 0.3, 0.6, 0.2), p);
  EXPECT_EQ(s.k(), 1u);
}

TEST(Quickshift, SinglePixelIsOneSegment) {
  EXPECT_EQ(quickshift(uniform_image(1, 1, 0.5, 0.5, 0.5), QuickshiftParams{}).k(), 1u);
}

TEST(Quickshift, NoLinkCrossesAColorEdge) {
  const RgbImage img = two_halves(16);
  QuickshiftParams p;
  p.max_dist = 7.0;
  const QuickshiftForest f = quickshift_forest(img, p);
  for (std::size_t q = 0; q < f.parent.size(); ++q) {
    EXPECT_EQ(q % 16 < 8, f.parent[q] % 16 < 8) << "pixel " << q;
  }
  const SegmentMap s = quickshift(img, p);
  std::set<int> left, right;
  for (std::size_t q = 0; q < s.pixel_count(); ++q) (q % 16 < 8 ? left : right).insert(s.label(q));
  for (int l : left) EXPECT_EQ(right.count(l), 0u);
}

TEST(Quickshift, ParentsAreDenser) {
  std::mt19937_64 rng(3);
  const RgbImage img = fixture::random_image(12, 12, rng);
  const QuickshiftForest f = quickshift_forest(img, QuickshiftParams{});
  for (std::size_t q = 0; q < f.parent.size(); ++q) {
    const std::size_t r = f.parent[q];
    if (r == q) continue;
    EXPECT_TRUE(f.density[r] > f.density[q] || (f.density[r] == f.density[q] && r > q));
  }
}

TEST(Quickshift, Deterministic) {
  std::mt19937_64 rng(4);
  const RgbImage img = fixture::texture(32, 32, rng);
  const auto p = QuickshiftParams::defaults_for_width(32);
  EXPECT_EQ(quickshift(img, p), quickshift(img, p));
}

TEST(Quickshift, RejectsBadParams) {
  QuickshiftParams p;
  p.kernel_size = 0;
  EXPECT_THROW(quickshift(RgbImage(4, 4), p), InvalidArgument);
}

TEST(Quickshift, CalibrationApproachesTarget) {
  std::mt19937_64 rng(5);
  const RgbImage img = fixture::random_image(48, 48, rng);
  const auto cal = calibrate_quickshift(img, 40, QuickshiftParams::defaults_for_width(48));
  EXPECT_EQ(quickshift(img, cal.params).k(), cal.k);
  EXPECT_GE(cal.k, 32u);
  EXPECT_LE(cal.k, 48u);
  EXPECT_LE(cal.iterations, 12);
}

TEST(ConnectedComponents, FourConnectivity) {
  BinaryMask m(3, 3);
  m(0, 0) = 1;
  m(1, 1) = 1;  // diagonal only: separate
  m(2, 1) = 1;
  std::vector<int> labels;
  EXPECT_EQ(connected_components(m, labels), 2);
  EXPECT_EQ(labels[0], 0);
  EXPECT_EQ(labels[4], labels[7]);
  EXPECT_EQ(labels[1], -1);
}

TEST(GtAware, WholeImageGtIsOneSegment) {
  const RgbImage img = uniform_image(8, 8, 0.5, 0.5, 0.5);
  const SegmentMap s = gt_aware_segmentation(img, BinaryMask(8, 8, 1), QuickshiftParams{});
  EXPECT_EQ(s.k(), 1u);
}

TEST(GtAware, SquareInUniformImage) {
  const RgbImage img = uniform_image(16, 16, 0.4, 0.4, 0.4);
  BinaryMask gt(16, 16);
  for (std::size_t y = 5; y < 9; ++y) {
    for (std::size_t x = 6; x < 10; ++x) gt(y, x) = 1;
  }
  QuickshiftParams p;
  p.max_dist = 32.0;
  const SegmentMap s = gt_aware_segmentation(img, gt, p);
  ASSERT_EQ(s.k(), 2u);
  const int inside = s.label(5, 6);
  for (std::size_t q = 0; q < s.pixel_count(); ++q) EXPECT_EQ(s.label(q) == inside, gt.at_pixel(q) != 0);
}

TEST(GtAware, EachComponentIsolated) {
  std::mt19937_64 rng(6);
  const RgbImage img = fixture::texture(32, 32, rng);
  BinaryMask gt(32, 32);
  gt(2, 2) = gt(2, 3) = 1;
  gt(20, 20) = 1;
  const SegmentMap s = gt_aware_segmentation(img, gt, QuickshiftParams::defaults_for_width(32));
  EXPECT_EQ(s.label(2, 2), s.label(2, 3));
  EXPECT_NE(s.label(2, 2), s.label(20, 20));
  for (std::size_t q = 0; q < s.pixel_count(); ++q) {
    if (gt.at_pixel(q)) continue;
    EXPECT_NE(s.label(q), s.label(2, 2));
    EXPECT_NE(s.label(q), s.label(20, 20));
  }
  EXPECT_THROW(gt_aware_segmentation(img, BinaryMask(32, 32), QuickshiftParams{}), InvalidArgument);
}

TEST(Serialization, RleAndPngRoundTrip) {
  std::mt19937_64 rng(7);
  const SegmentMap s = fixture::voronoi_segments(20, 17, 12, rng);
  EXPECT_EQ(from_rle(to_rle(s)), s);
  TempDir dir("seg");
  save_segments_png(dir.path() / "s.png", s);
  EXPECT_EQ(load_segments_png(dir.path() / "s.png"), s);
  EXPECT_THROW(from_rle("SEGRLE 2 2 1\n0 3\n"), IoError);
  EXPECT_THROW(from_rle("nope"), IoError);
}

TEST(Serialization, RleFormat) {
  const SegmentMap s = SegmentMap::from_labels(2, 3, {0, 0, 1, 1, 1, 0});
  EXPECT_EQ(to_rle(s), "SEGRLE 2 3 2\n0 2\n1 3\n0 1\n");
}
