#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "anomex/error.hpp"
#include "anomex/image.hpp"
#include "anomex/raster_io.hpp"

namespace anomex {

/// Superpixel partition: every pixel carries a label in [0, k) and every
/// label occurs at least once.
class SegmentMap {
 public:
  SegmentMap() = default;

  /// Builds a map from arbitrary integer labels, compacting them to [0, k)
  /// in order of first appearance in raster order.
  static SegmentMap from_labels(std::size_t height, std::size_t width, const std::vector<int>& raw) {
    if (raw.size() != height * width) throw ShapeError("segment labels do not match image size");
    SegmentMap seg;
    seg.height_ = height;
    seg.width_ = width;
    seg.labels_.resize(raw.size());
    std::unordered_map<int, int> remap;
    for (std::size_t p = 0; p < raw.size(); ++p) {
      auto [it, inserted] = remap.try_emplace(raw[p], static_cast<int>(remap.size()));
      seg.labels_[p] = it->second;
    }
    seg.k_ = remap.size();
    return seg;
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return labels_.size(); }
  std::size_t k() const noexcept { return k_; }

  int label(std::size_t p) const { return labels_[p]; }
  int label(std::size_t y, std::size_t x) const { return labels_[y * width_ + x]; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  template <typename U, std::size_t C>
  bool same_shape(const Raster<U, C>& r) const noexcept {
    return height_ == r.height() && width_ == r.width();
  }

  /// Pixel count per segment.
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out(k_, 0);
    for (int l : labels_) ++out[static_cast<std::size_t>(l)];
    return out;
  }

  friend bool operator==(const SegmentMap&, const SegmentMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t k_ = 0;
  std::vector<int> labels_;
};

struct QuickshiftParams {
  double kernel_size = 4.0;  // Gaussian bandwidth in pixels
  double max_dist = 200.0;   // parent links longer than this are cut
  double ratio = 0.2;        // color weight against pixel coordinates
  std::uint64_t seed = 0;    // unused by the deterministic estimator

  /// Defaults scaled to the image width (tuned at 128 px).
  static QuickshiftParams defaults_for_width(std::size_t width) {
    QuickshiftParams p;
    p.max_dist = 200.0 * static_cast<double>(width) / 128.0;
    return p;
  }
};

/// Parent forest produced by mode seeking; roots point at themselves.
struct QuickshiftForest {
  std::vector<std::size_t> parent;
  std::vector<double> density;
};

namespace detail {

inline void check_params(const QuickshiftParams& params) {
  if (!(params.kernel_size > 0)) throw InvalidArgument("quickshift: kernel_size must be > 0");
  if (!(params.max_dist > 0)) throw InvalidArgument("quickshift: max_dist must be > 0");
}

// Density order: strictly higher density, ties resolved by larger flat index.
inline bool denser(double dq, std::size_t q, double dp, std::size_t p) {
  return dq > dp || (dq == dp && q > p);
}

}  // namespace detail

/// Mode seeking in joint (color, position) space. Color is taken on the
/// 8-bit scale and multiplied by ratio; positions are pixel coordinates.
inline QuickshiftForest quickshift_forest(const RgbImage& img, const QuickshiftParams& params) {
  detail::check_params(params);
  if (img.empty()) throw ShapeError("quickshift: empty image");
  const std::size_t h = img.height();
  const std::size_t w = img.width();
  const std::size_t n = h * w;
  const double color_scale = 255.0 * params.ratio;
  std::vector<double> color(n * 3);
  for (std::size_t i = 0; i < n * 3; ++i) color[i] = img.data()[i] * color_scale;

  const auto radius = static_cast<long>(std::ceil(3.0 * params.kernel_size));
  const double inv_two_sigma2 = 1.0 / (2.0 * params.kernel_size * params.kernel_size);
  const auto H = static_cast<long>(h);
  const auto W = static_cast<long>(w);

  auto dist2 = [&](std::size_t p, std::size_t q, long dy, long dx) {
    double d = static_cast<double>(dy * dy + dx * dx);
    for (std::size_t c = 0; c < 3; ++c) {
      const double diff = color[p * 3 + c] - color[q * 3 + c];
      d += diff * diff;
    }
    return d;
  };

  QuickshiftForest forest;
  forest.density.assign(n, 0.0);
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      const auto p = static_cast<std::size_t>(y * W + x);
      double density = 0.0;
      for (long yy = std::max(0L, y - radius); yy <= std::min(H - 1, y + radius); ++yy) {
        for (long xx = std::max(0L, x - radius); xx <= std::min(W - 1, x + radius); ++xx) {
          const auto q = static_cast<std::size_t>(yy * W + xx);
          density += std::exp(-dist2(p, q, yy - y, xx - x) * inv_two_sigma2);
        }
      }
      forest.density[p] = density;
    }
  }

  const double max_dist2 = params.max_dist * params.max_dist;
  forest.parent.resize(n);
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      const auto p = static_cast<std::size_t>(y * W + x);
      double best = std::numeric_limits<double>::infinity();
      std::size_t parent = p;
      for (long yy = std::max(0L, y - radius); yy <= std::min(H - 1, y + radius); ++yy) {
        for (long xx = std::max(0L, x - radius); xx <= std::min(W - 1, x + radius); ++xx) {
          const auto q = static_cast<std::size_t>(yy * W + xx);
          if (!detail::denser(forest.density[q], q, forest.density[p], p)) continue;
          const double d = dist2(p, q, yy - y, xx - x);
          if (d < best) {
            best = d;
            parent = q;
          }
        }
      }
      forest.parent[p] = best <= max_dist2 ? parent : p;
    }
  }
  return forest;
}

/// Quickshift superpixels: the trees of the mode-seeking forest.
inline SegmentMap quickshift(const RgbImage& img, const QuickshiftParams& params) {
  QuickshiftForest forest = quickshift_forest(img, params);
  auto& parent = forest.parent;
  // Parents always have strictly higher density order, so chains terminate.
  for (std::size_t p = 0; p < parent.size(); ++p) {
    std::size_t root = p;
    while (parent[root] != root) root = parent[root];
    std::size_t q = p;
    while (parent[q] != root && q != root) {
      const std::size_t next = parent[q];
      parent[q] = root;
      q = next;
    }
  }
  std::vector<int> raw(parent.size());
  for (std::size_t p = 0; p < parent.size(); ++p) raw[p] = static_cast<int>(parent[p]);
  return SegmentMap::from_labels(img.height(), img.width(), raw);
}

struct QuickshiftCalibration {
  QuickshiftParams params;
  std::size_t k = 0;
  int iterations = 0;
};

/// Bisects max_dist (geometrically) to land within +-tolerance of target_k
/// segments. Segment count is non-increasing in max_dist. Returns the closest
/// attempt when the target is not reachable within max_iterations.
inline QuickshiftCalibration calibrate_quickshift(const RgbImage& img, std::size_t target_k, QuickshiftParams base,
                                                  double tolerance = 0.2, int max_iterations = 12) {
  if (target_k == 0) throw InvalidArgument("calibrate_quickshift: target_k must be >= 1");
  const double lo_k = static_cast<double>(target_k) * (1.0 - tolerance);
  const double hi_k = static_cast<double>(target_k) * (1.0 + tolerance);
  auto within = [&](std::size_t k) { return k >= lo_k && k <= hi_k; };
  auto gap = [&](std::size_t k) { return std::abs(static_cast<double>(k) - static_cast<double>(target_k)); };

  QuickshiftCalibration best{base, quickshift(img, base).k(), 1};
  if (within(best.k)) return best;

  double lo = 0.5;  // below nearest-neighbour spacing: every pixel is a root
  double hi = std::max(base.max_dist, lo * 2);
  if (best.k > hi_k) {
    // Too many segments even at the starting distance: search upward.
    lo = base.max_dist;
    hi = base.max_dist * 8;
  } else {
    hi = base.max_dist;
  }
  for (int it = 1; it < max_iterations; ++it) {
    QuickshiftParams trial = base;
    trial.max_dist = std::sqrt(lo * hi);
    const std::size_t k = quickshift(img, trial).k();
    if (gap(k) < gap(best.k)) best = {trial, k, it + 1};
    best.iterations = it + 1;
    if (within(k)) return {trial, k, it + 1};
    if (k > target_k) {
      lo = trial.max_dist;
    } else {
      hi = trial.max_dist;
    }
  }
  return best;
}

/// Labels the 4-connected components of the true pixels of mask; false pixels
/// receive -1. Returns the number of components.
inline int connected_components(const BinaryMask& mask, std::vector<int>& labels) {
  const std::size_t h = mask.height();
  const std::size_t w = mask.width();
  labels.assign(h * w, -1);
  int next = 0;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!mask.at_pixel(start) || labels[start] >= 0) continue;
    labels[start] = next;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      const std::size_t y = p / w;
      const std::size_t x = p % w;
      auto visit = [&](std::size_t q) {
        if (mask.at_pixel(q) && labels[q] < 0) {
          labels[q] = next;
          queue.push_back(q);
        }
      };
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
    }
    ++next;
  }
  return next;
}

/// Quickshift outside the ground truth; every 4-connected ground-truth
/// component becomes its own segment.
inline SegmentMap gt_aware_segmentation(const RgbImage& img, const BinaryMask& gt, const QuickshiftParams& params) {
  require_same_shape(img, gt, "gt_aware_segmentation");
  if (count(gt) == 0) throw InvalidArgument("gt_aware_segmentation: ground truth is empty");
  const SegmentMap base = quickshift(img, params);
  std::vector<int> components;
  connected_components(gt, components);
  const int offset = static_cast<int>(base.k());
  std::vector<int> raw(base.pixel_count());
  for (std::size_t p = 0; p < raw.size(); ++p) raw[p] = components[p] >= 0 ? offset + components[p] : base.label(p);
  return SegmentMap::from_labels(img.height(), img.width(), raw);
}

// ---------------------------------------------------------------------------
// Serialization

/// Run-length text: "SEGRLE <h> <w> <k>" then one "<label> <run>" per line
/// in raster order.
inline std::string to_rle(const SegmentMap& seg) {
  std::ostringstream out;
  out << "SEGRLE " << seg.height() << ' ' << seg.width() << ' ' << seg.k() << '\n';
  const auto& labels = seg.labels();
  std::size_t i = 0;
  while (i < labels.size()) {
    std::size_t j = i;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    out << labels[i] << ' ' << (j - i) << '\n';
    i = j;
  }
  return out.str();
}

inline SegmentMap from_rle(const std::string& text) {
  std::istringstream in(text);
  std::string magic;
  std::size_t h = 0, w = 0, k = 0;
  if (!(in >> magic >> h >> w >> k) || magic != "SEGRLE") throw IoError("bad segment RLE header");
  std::vector<int> raw;
  raw.reserve(h * w);
  int label = 0;
  std::size_t run = 0;
  while (in >> label >> run) raw.insert(raw.end(), run, label);
  if (raw.size() != h * w) throw IoError("segment RLE covers " + std::to_string(raw.size()) + " pixels");
  SegmentMap seg = SegmentMap::from_labels(h, w, raw);
  if (seg.k() != k || seg.labels() != raw) throw IoError("segment RLE labels are not compact");
  return seg;
}

inline void save_segments_png(const std::filesystem::path& path, const SegmentMap& seg) {
  if (seg.k() > 65536) throw InvalidArgument("too many segments for a 16-bit label image");
  std::vector<std::uint16_t> values(seg.labels().begin(), seg.labels().end());
  save_png_gray16(path, seg.height(), seg.width(), values);
}

inline SegmentMap load_segments_png(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const std::vector<std::uint16_t> values = load_png_gray16(path, h, w);
  return SegmentMap::from_labels(h, w, std::vector<int>(values.begin(), values.end()));
}

}  // namespace anomex
