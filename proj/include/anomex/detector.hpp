#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anomex/error.hpp"

namespace anomex::detector {

enum class Label { good, anomalous };

inline const char* to_string(Label l) { return l == Label::good ? "good" : "anomalous"; }

inline Label parse_label(const std::string& s) {
  if (s == "good") return Label::good;
  if (s == "anomalous") return Label::anomalous;
  throw InvalidArgument("unknown label '" + s + "'");
}

struct ScoredSample {
  std::string sample_id;
  double score = 0.0;  // alpha
  Label label = Label::good;
};

struct RocPoint {
  double tau = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  double accuracy() const {
    return total() ? static_cast<double>(tp + tn) / static_cast<double>(total()) : 0.0;
  }
  double tpr() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  double fpr() const { return fp + tn ? static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct CalibrationResult {
  double tau_star = 0.0;
  double objective = 0.0;  // sqrt(TPR * (1 - FPR)) at tau_star
  std::vector<RocPoint> roc_points;
  Confusion confusion;
};

/// Anomalous iff score >= tau.
inline Label classify(double score, double tau) { return score >= tau ? Label::anomalous : Label::good; }

inline Confusion confusion_at(const std::vector<ScoredSample>& samples, double tau) {
  Confusion c;
  for (const auto& s : samples) {
    const bool flagged = classify(s.score, tau) == Label::anomalous;
    if (s.label == Label::anomalous) {
      flagged ? ++c.tp : ++c.fn;
    } else {
      flagged ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

inline double youden_geometric(const Confusion& c) { return std::sqrt(c.tpr() * (1.0 - c.fpr())); }

/// Candidate thresholds: midpoints between consecutive distinct scores, plus
/// one half-gap below the minimum and one half-gap above the maximum.
inline std::vector<double> candidate_thresholds(const std::vector<ScoredSample>& samples) {
  std::vector<double> scores;
  scores.reserve(samples.size());
  for (const auto& s : samples) scores.push_back(s.score);
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  double min_gap = 0.5;
  if (scores.size() > 1) {
    min_gap = scores[1] - scores[0];
    for (std::size_t i = 2; i < scores.size(); ++i) min_gap = std::min(min_gap, scores[i] - scores[i - 1]);
    min_gap *= 0.5;
  }
  std::vector<double> out;
  out.reserve(scores.size() + 1);
  out.push_back(scores.front() - min_gap);
  for (std::size_t i = 1; i < scores.size(); ++i) out.push_back(0.5 * (scores[i - 1] + scores[i]));
  out.push_back(scores.back() + min_gap);
  return out;
}

/// tau* = argmax sqrt(TPR * (1 - FPR)) over the candidates, smallest tau on ties.
inline CalibrationResult calibrate(const std::vector<ScoredSample>& samples) {
  std::size_t positives = 0;
  for (const auto& s : samples) {
    if (!(s.score >= 0) || !std::isfinite(s.score)) {
      throw InvalidArgument("calibrate: sample '" + s.sample_id + "' has invalid score");
    }
    positives += s.label == Label::anomalous;
  }
  if (positives == 0 || positives == samples.size()) {
    throw InvalidArgument("calibrate: need at least one good and one anomalous sample");
  }

  CalibrationResult result;
  result.objective = -1.0;
  for (double tau : candidate_thresholds(samples)) {
    const Confusion c = confusion_at(samples, tau);
    result.roc_points.push_back({tau, c.tpr(), c.fpr()});
    const double obj = youden_geometric(c);
    if (obj > result.objective) {
      result.objective = obj;
      result.tau_star = tau;
      result.confusion = c;
    }
  }
  return result;
}

struct Verdict {
  std::string sample_id;
  Label truth = Label::good;
  Label predicted = Label::good;
  bool correct() const noexcept { return truth == predicted; }
};

struct Metrics {
  Confusion confusion;
  double accuracy = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  std::size_t good = 0;
  std::size_t anomalous = 0;
  std::vector<Verdict> verdicts;
};

inline Metrics summarize(const std::vector<ScoredSample>& samples, double tau) {
  if (samples.empty()) throw InvalidArgument("summarize: no samples");
  Metrics m;
  m.confusion = confusion_at(samples, tau);
  m.accuracy = m.confusion.accuracy();
  m.tpr = m.confusion.tpr();
  m.fpr = m.confusion.fpr();
  for (const auto& s : samples) {
    (s.label == Label::good ? m.good : m.anomalous) += 1;
    m.verdicts.push_back({s.sample_id, s.label, classify(s.score, tau)});
  }
  return m;
}

inline nlohmann::ordered_json to_json(const CalibrationResult& r) {
  nlohmann::ordered_json j;
  j["tau_star"] = r.tau_star;
  j["objective"] = r.objective;
  j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
  j["accuracy"] = r.confusion.accuracy();
  auto& roc = j["roc"] = nlohmann::ordered_json::array();
  for (const auto& p : r.roc_points) roc.push_back({{"tau", p.tau}, {"tpr", p.tpr}, {"fpr", p.fpr}});
  return j;
}

inline CalibrationResult calibration_from_json(const nlohmann::json& j) {
  CalibrationResult r;
  r.tau_star = j.at("tau_star").get<double>();
  r.objective = j.at("objective").get<double>();
  const auto& c = j.at("confusion");
  r.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                 c.at("fn").get<std::size_t>()};
  for (const auto& p : j.at("roc")) {
    r.roc_points.push_back({p.at("tau").get<double>(), p.at("tpr").get<double>(), p.at("fpr").get<double>()});
  }
  return r;
}

inline void write_roc_csv(const std::filesystem::path& path, const CalibrationResult& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "tau,tpr,fpr\n" << std::setprecision(17);
  for (const auto& p : r.roc_points) out << p.tau << ',' << p.tpr << ',' << p.fpr << '\n';
}

}  // namespace anomex::detector
