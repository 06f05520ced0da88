#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <string>
#include <vector>

#include "anomex/error.hpp"
#include "anomex/image.hpp"
#include "anomex/parallel.hpp"
#include "anomex/segmentation.hpp"

namespace anomex::lime {

/// x in {0,1}^k: 1 keeps superpixel i from the input, 0 splices in the
/// reconstruction.
struct MaskVector {
  std::vector<std::uint8_t> bits;

  std::size_t size() const noexcept { return bits.size(); }
  bool keep(std::size_t i) const { return bits[i] != 0; }
  std::size_t zeros() const {
    std::size_t z = 0;
    for (auto b : bits) z += b == 0;
    return z;
  }
  friend bool operator==(const MaskVector&, const MaskVector&) = default;
};

/// The synthetic neighborhood: masks X, targets Y and kernel weights.
struct Neighborhood {
  std::vector<MaskVector> masks;
  std::vector<double> targets;
  std::vector<double> weights;

  std::size_t size() const noexcept { return masks.size(); }
};

struct LimeExplanation {
  std::vector<double> coefficients;  // b, one per segment, raw regression sign
  double intercept = 0.0;
  std::vector<double> residuals;     // epsilon = Y - (intercept + X b)
  ScalarMap pixel_attribution;       // beta_L = -b[label(p)]

  /// Anomaly-signed segment score (higher = more anomalous).
  double segment_score(std::size_t i) const { return -coefficients[i]; }
};

inline constexpr double kDefaultKernelWidth = 0.25;

/// Draws n masks; mask 0 is all ones, the rest are i.i.d. fair Bernoulli bits
/// taken from a mt19937_64 stream so the result is reproducible everywhere.
inline std::vector<MaskVector> sample_masks(std::size_t k, std::size_t n, std::uint64_t seed) {
  if (k < 1) throw InvalidArgument("sample_masks: k must be >= 1");
  if (n < k + 2) {
    throw InvalidArgument("sample_masks: n = " + std::to_string(n) + " < k + 2 = " + std::to_string(k + 2) +
                          " leaves the fit under-determined");
  }
  std::mt19937_64 rng(seed);
  std::vector<MaskVector> masks(n, MaskVector{std::vector<std::uint8_t>(k, 1)});
  for (std::size_t s = 1; s < n; ++s) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (i % 64 == 0) word = rng();
      masks[s].bits[i] = static_cast<std::uint8_t>(word & 1u);
      word >>= 1;
    }
  }
  return masks;
}

inline void check_inputs(const RgbImage& input, const RgbImage& recon, const SegmentMap& seg) {
  require_same_shape(input, recon, "lime");
  if (!seg.same_shape(input)) throw ShapeError("lime: segment map does not match image shape");
}

/// xi_x: reconstruction pixels where the pixel's superpixel is masked out.
inline RgbImage perturb(const RgbImage& input, const RgbImage& recon, const SegmentMap& seg, const MaskVector& x) {
  check_inputs(input, recon, seg);
  if (x.size() != seg.k()) {
    throw InvalidArgument("perturb: mask length " + std::to_string(x.size()) + " != segment count " +
                          std::to_string(seg.k()));
  }
  RgbImage out = input;
  for (std::size_t p = 0; p < seg.pixel_count(); ++p) {
    if (!x.keep(static_cast<std::size_t>(seg.label(p)))) {
      for (std::size_t c = 0; c < 3; ++c) out.at_pixel(p, c) = recon.at_pixel(p, c);
    }
  }
  return out;
}

/// Exponential kernel over the fraction of replaced superpixels.
inline double kernel_weight(const MaskVector& x, double width = kDefaultKernelWidth) {
  const double d = static_cast<double>(x.zeros()) / static_cast<double>(x.size());
  return std::exp(-(d * d) / (width * width));
}

/// Evaluates f(xi_x) = MSE(xi, xi_x) for every mask. Targets are stored per
/// index so the result does not depend on the number of jobs.
inline Neighborhood neighborhood(const RgbImage& input, const RgbImage& recon, const SegmentMap& seg,
                                 std::vector<MaskVector> masks, std::size_t jobs = 1,
                                 double kernel_width = kDefaultKernelWidth) {
  check_inputs(input, recon, seg);
  Neighborhood nb;
  nb.targets.assign(masks.size(), 0.0);
  nb.weights.assign(masks.size(), 0.0);
  for (const auto& m : masks) {
    if (m.size() != seg.k()) throw InvalidArgument("neighborhood: mask length does not match segment count");
  }
  parallel_for(masks.size(), jobs, [&](std::size_t i) {
    nb.targets[i] = mse(input, perturb(input, recon, seg, masks[i]));
    nb.weights[i] = kernel_weight(masks[i], kernel_width);
  });
  nb.masks = std::move(masks);
  return nb;
}

struct FitOptions {
  double ridge = 0.0;  // lambda on the coefficients (never on the intercept)
};

/// Weighted least squares of Y on [1 X]; pixel attribution uses the
/// anomaly sign convention beta_L[p] = -b[label(p)].
inline LimeExplanation fit(const Neighborhood& nb, const SegmentMap& seg, const FitOptions& options = {}) {
  const std::size_t n = nb.size();
  const std::size_t k = seg.k();
  if (nb.targets.size() != n || nb.weights.size() != n) throw InvalidArgument("fit: neighborhood size mismatch");
  if (n < k + 1) throw InvalidArgument("fit: need at least k + 1 samples for k segments");
  if (options.ridge < 0) throw InvalidArgument("fit: ridge must be >= 0");

  const std::size_t cols = k + 1;
  const std::size_t extra = options.ridge > 0 ? k : 0;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n + extra), static_cast<Eigen::Index>(cols));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n + extra));
  for (std::size_t i = 0; i < n; ++i) {
    if (!(nb.weights[i] > 0)) throw InvalidArgument("fit: weights must be positive");
    if (nb.masks[i].size() != k) throw InvalidArgument("fit: mask length does not match segment count");
    const double sw = std::sqrt(nb.weights[i]);
    const auto r = static_cast<Eigen::Index>(i);
    A(r, 0) = sw;
    for (std::size_t j = 0; j < k; ++j) A(r, static_cast<Eigen::Index>(j + 1)) = nb.masks[i].keep(j) ? sw : 0.0;
    rhs(r) = sw * nb.targets[i];
  }
  for (std::size_t j = 0; j < extra; ++j) {
    A(static_cast<Eigen::Index>(n + j), static_cast<Eigen::Index>(j + 1)) = std::sqrt(options.ridge);
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(cols)) {
    std::vector<int> collinear;
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index r = qr.rank(); r < static_cast<Eigen::Index>(cols); ++r) {
      const int col = perm(r);
      collinear.push_back(col - 1);
      names += (names.empty() ? "" : ", ") + (col == 0 ? std::string("intercept") : "segment " + std::to_string(col - 1));
    }
    throw RankDeficientError("fit: rank-deficient design (rank " + std::to_string(qr.rank()) + " of " +
                                 std::to_string(cols) + "); collinear: " + names,
                             std::move(collinear));
  }
  const Eigen::VectorXd solution = qr.solve(rhs);

  LimeExplanation ex;
  ex.intercept = solution(0);
  ex.coefficients.resize(k);
  for (std::size_t j = 0; j < k; ++j) ex.coefficients[j] = solution(static_cast<Eigen::Index>(j + 1));
  ex.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double pred = ex.intercept;
    for (std::size_t j = 0; j < k; ++j) pred += nb.masks[i].keep(j) ? ex.coefficients[j] : 0.0;
    ex.residuals[i] = nb.targets[i] - pred;
  }
  ex.pixel_attribution = ScalarMap(seg.height(), seg.width());
  for (std::size_t p = 0; p < seg.pixel_count(); ++p) {
    ex.pixel_attribution.at_pixel(p) = -ex.coefficients[static_cast<std::size_t>(seg.label(p))];
  }
  return ex;
}

struct ExplainOptions {
  std::size_t samples = 5000;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  double kernel_width = kDefaultKernelWidth;
  FitOptions fit;
};

/// Sample, perturb, evaluate and fit in one call.
inline LimeExplanation explain(const RgbImage& input, const RgbImage& recon, const SegmentMap& seg,
                               const ExplainOptions& options = {}) {
  auto masks = sample_masks(seg.k(), options.samples, options.seed);
  const Neighborhood nb = neighborhood(input, recon, seg, std::move(masks), options.jobs, options.kernel_width);
  return fit(nb, seg, options.fit);
}

/// CSV: segment_id,coefficient,anomaly_score
inline void write_coefficients_csv(const std::filesystem::path& path, const LimeExplanation& ex) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "segment_id,coefficient,anomaly_score\n" << std::setprecision(17);
  for (std::size_t i = 0; i < ex.coefficients.size(); ++i) {
    out << i << ',' << ex.coefficients[i] << ',' << ex.segment_score(i) << '\n';
  }
}

}  // namespace anomex::lime
