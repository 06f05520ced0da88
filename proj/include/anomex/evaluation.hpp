#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anomex/detector.hpp"
#include "anomex/error.hpp"
#include "anomex/image.hpp"

namespace anomex::evaluation {

struct LocalizationResult {
  double theta_star = 0.0;
  double j_star = 0.0;
  BinaryMask tp_mask;
  BinaryMask fp_mask;
  BinaryMask fn_mask;
};

/// gamma'[p] = beta[p] > theta (strict).
inline BinaryMask binarize(const ScalarMap& beta, double theta) {
  BinaryMask out(beta.height(), beta.width());
  for (std::size_t p = 0; p < beta.pixel_count(); ++p) out.at_pixel(p) = beta.at_pixel(p) > theta ? 1 : 0;
  return out;
}

inline void require_nonempty_gt(const BinaryMask& gt) {
  if (count(gt) == 0) {
    throw GoodSampleError("ground truth is empty: the Jaccard coefficient is undefined for good samples");
  }
}

/// |gt & pred| / |gt | pred|; 0 when pred is empty.
inline double jaccard(const BinaryMask& gt, const BinaryMask& pred) {
  require_same_shape(gt, pred, "jaccard");
  require_nonempty_gt(gt);
  std::size_t inter = 0, uni = 0;
  for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
    const bool a = gt.at_pixel(p) != 0;
    const bool b = pred.at_pixel(p) != 0;
    inter += a && b;
    uni += a || b;
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline LocalizationResult localization_at(const ScalarMap& beta, const BinaryMask& gt, double theta) {
  LocalizationResult r;
  r.theta_star = theta;
  const BinaryMask pred = binarize(beta, theta);
  r.tp_mask = BinaryMask(gt.height(), gt.width());
  r.fp_mask = BinaryMask(gt.height(), gt.width());
  r.fn_mask = BinaryMask(gt.height(), gt.width());
  for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
    const bool g = gt.at_pixel(p) != 0;
    const bool e = pred.at_pixel(p) != 0;
    r.tp_mask.at_pixel(p) = g && e;
    r.fp_mask.at_pixel(p) = !g && e;
    r.fn_mask.at_pixel(p) = g && !e;
  }
  r.j_star = jaccard(gt, pred);
  return r;
}

enum class SweepMode {
  exact,     // every distinct value of beta
  quantile,  // 256 quantiles of beta
};

/// Maximizes J over thresholds placed just below each candidate value (so the
/// candidate itself is included) plus +inf (empty prediction). Ties go to the
/// largest threshold.
inline LocalizationResult optimal_jaccard(const ScalarMap& beta, const BinaryMask& gt,
                                          SweepMode mode = SweepMode::exact) {
  require_same_shape(beta, gt, "optimal_jaccard");
  require_nonempty_gt(gt);
  for (double v : beta.data()) {
    if (!std::isfinite(v)) throw InvalidArgument("optimal_jaccard: attribution contains non-finite values");
  }
  const std::size_t n = beta.pixel_count();
  const std::size_t gt_count = count(gt);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return beta.at_pixel(a) > beta.at_pixel(b); });

  std::vector<double> cutoffs;  // descending candidate values
  if (mode == SweepMode::exact) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = beta.at_pixel(order[i]);
      if (cutoffs.empty() || cutoffs.back() != v) cutoffs.push_back(v);
    }
  } else {
    for (int q = 255; q >= 0; --q) {
      const auto idx = static_cast<std::size_t>(std::llround(q / 255.0 * static_cast<double>(n - 1)));
      const double v = beta.at_pixel(order[n - 1 - idx]);
      if (cutoffs.empty() || cutoffs.back() != v) cutoffs.push_back(v);
    }
  }

  double best_j = 0.0;
  double best_theta = std::numeric_limits<double>::infinity();
  std::size_t pred = 0, tp = 0, i = 0;
  for (double v : cutoffs) {
    while (i < n && beta.at_pixel(order[i]) >= v) {
      pred += 1;
      tp += gt.at_pixel(order[i]) != 0;
      ++i;
    }
    const double j = static_cast<double>(tp) / static_cast<double>(gt_count + pred - tp);
    if (j > best_j) {
      best_j = j;
      best_theta = std::nextafter(v, -std::numeric_limits<double>::infinity());
    }
  }
  LocalizationResult r = localization_at(beta, gt, best_theta);
  r.j_star = best_j;
  return r;
}

// ---------------------------------------------------------------------------
// Reports

struct SampleReportRow {
  std::string sample_id;
  std::string category;
  std::string setup;  // S1, S2 or S3
  double alpha = 0.0;
  detector::Label verdict = detector::Label::good;
  detector::Label label = detector::Label::good;
  std::optional<double> j_lime;
  std::optional<double> j_shap;
  std::optional<double> theta_lime;
  std::optional<double> theta_shap;
};

inline const char* kReportHeader = "sample_id,category,setup,alpha,verdict,label,j_lime,j_shap,theta_lime,theta_shap";

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline std::string to_csv(const std::vector<SampleReportRow>& rows) {
  std::ostringstream out;
  out << kReportHeader << '\n';
  for (const auto& r : rows) {
    if (r.sample_id.find(',') != std::string::npos) throw InvalidArgument("sample id contains a comma: " + r.sample_id);
    out << r.sample_id << ',' << r.category << ',' << r.setup << ',' << detail::fmt(r.alpha) << ','
        << detector::to_string(r.verdict) << ',' << detector::to_string(r.label) << ',' << detail::fmt(r.j_lime) << ','
        << detail::fmt(r.j_shap) << ',' << detail::fmt(r.theta_lime) << ',' << detail::fmt(r.theta_shap) << '\n';
  }
  return out.str();
}

inline std::vector<SampleReportRow> rows_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) throw IoError("report CSV: unexpected header");
  std::vector<SampleReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 10) throw IoError("report CSV: expected 10 fields in '" + line + "'");
    rows.push_back({f[0], f[1], f[2], std::stod(f[3]), detector::parse_label(f[4]), detector::parse_label(f[5]),
                    detail::parse_opt(f[6]), detail::parse_opt(f[7]), detail::parse_opt(f[8]),
                    detail::parse_opt(f[9])});
  }
  return rows;
}

/// (alpha, J) pairs per method and setup with the tau* line position.
inline nlohmann::ordered_json scatter_json(const std::vector<SampleReportRow>& rows, std::optional<double> tau_star) {
  nlohmann::ordered_json j;
  j["tau_star"] = tau_star ? nlohmann::ordered_json(*tau_star) : nlohmann::ordered_json(nullptr);
  auto& series = j["series"] = nlohmann::ordered_json::object();
  for (const auto& r : rows) {
    auto add = [&](const char* method, const std::optional<double>& jv) {
      if (!jv) return;
      auto& s = series[std::string(method) + "/" + r.setup];
      s.push_back({{"sample_id", r.sample_id}, {"alpha", r.alpha}, {"j", *jv},
                   {"correct", r.verdict == r.label}});
    };
    add("lime", r.j_lime);
    add("shap", r.j_shap);
  }
  return j;
}

/// Writes report.csv and scatter.json into `dir`.
inline void scatter_report(const std::filesystem::path& dir, const std::vector<SampleReportRow>& rows,
                           std::optional<double> tau_star) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.csv");
    if (!out) throw IoError("cannot write " + (dir / "report.csv").string());
    out << to_csv(rows);
  }
  std::ofstream out(dir / "scatter.json");
  if (!out) throw IoError("cannot write " + (dir / "scatter.json").string());
  out << scatter_json(rows, tau_star).dump(2) << '\n';
}

struct Quadrants {
  std::size_t correct_localized = 0;
  std::size_t correct_mislocalized = 0;
  std::size_t incorrect_localized = 0;
  std::size_t incorrect_mislocalized = 0;
};

/// Tallies rows with a J value for the chosen method by (verdict correct?) x
/// (J >= j_threshold?).
inline Quadrants quadrant_counts(const std::vector<SampleReportRow>& rows, bool use_lime, double j_threshold = 0.5) {
  Quadrants q;
  for (const auto& r : rows) {
    const auto& jv = use_lime ? r.j_lime : r.j_shap;
    if (!jv) continue;
    const bool correct = r.verdict == r.label;
    const bool localized = *jv >= j_threshold;
    if (correct) {
      (localized ? q.correct_localized : q.correct_mislocalized) += 1;
    } else {
      (localized ? q.incorrect_localized : q.incorrect_mislocalized) += 1;
    }
  }
  return q;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Dataset summary: accuracy of the stored verdicts and mean/median J per method.
inline nlohmann::ordered_json summary_json(const std::vector<SampleReportRow>& rows, std::optional<double> tau_star) {
  nlohmann::ordered_json j;
  std::size_t correct = 0, good = 0, anomalous = 0;
  std::vector<double> jl, js;
  for (const auto& r : rows) {
    correct += r.verdict == r.label;
    (r.label == detector::Label::good ? good : anomalous) += 1;
    if (r.j_lime) jl.push_back(*r.j_lime);
    if (r.j_shap) js.push_back(*r.j_shap);
  }
  j["samples"] = rows.size();
  j["good"] = good;
  j["anomalous"] = anomalous;
  j["tau_star"] = tau_star ? nlohmann::ordered_json(*tau_star) : nlohmann::ordered_json(nullptr);
  j["accuracy"] = rows.empty() ? nlohmann::ordered_json(nullptr)
                               : nlohmann::ordered_json(static_cast<double>(correct) / static_cast<double>(rows.size()));
  auto stats = [](const std::vector<double>& v) {
    nlohmann::ordered_json s;
    s["count"] = v.size();
    if (v.empty()) {
      s["mean"] = nullptr;
      s["median"] = nullptr;
    } else {
      s["mean"] = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      s["median"] = median(v);
    }
    return s;
  };
  j["lime"] = stats(jl);
  j["shap"] = stats(js);
  return j;
}

}  // namespace anomex::evaluation
