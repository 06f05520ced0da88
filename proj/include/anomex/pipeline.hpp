#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anomex/dataset.hpp"
#include "anomex/detector.hpp"
#include "anomex/evaluation.hpp"
#include "anomex/image.hpp"
#include "anomex/lime.hpp"
#include "anomex/parallel.hpp"
#include "anomex/raster_io.hpp"
#include "anomex/render.hpp"
#include "anomex/segmentation.hpp"
#include "anomex/shap.hpp"

namespace anomex::pipeline {

namespace fs = std::filesystem;

enum class Setup { S1, S2, S3 };

inline std::string to_string(Setup s) {
  switch (s) {
    case Setup::S1: return "S1";
    case Setup::S2: return "S2";
    case Setup::S3: return "S3";
  }
  return "?";
}

inline Setup parse_setup(const std::string& s) {
  if (s == "S1" || s == "s1") return Setup::S1;
  if (s == "S2" || s == "s2") return Setup::S2;
  if (s == "S3" || s == "s3") return Setup::S3;
  throw InvalidArgument("unknown setup '" + s + "' (expected S1, S2 or S3)");
}

// Exit codes
inline constexpr int kOk = 0;
inline constexpr int kPartialFailure = 1;
inline constexpr int kUsageError = 2;

struct RunConfig {
  fs::path dataset;
  std::string category;
  std::string provider = "cache";  // "cache" or "model"
  fs::path cache;
  fs::path model;
  std::set<std::string> methods{"lime", "shap"};
  Setup setup = Setup::S1;
  std::size_t segments = 100;
  std::size_t samples = 5000;
  std::size_t min_leaf = 4;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
  std::size_t side = 128;
  std::string split = "test";
  fs::path out = "out";

  fs::path run_dir() const { return out / category / to_string(setup); }

  bool uses(const std::string& method) const {
    if (setup == Setup::S3) return method == "shap";
    return methods.count(method) != 0;
  }

  /// Throws InvalidArgument on inconsistent settings.
  void validate() const {
    if (category.empty()) throw InvalidArgument("--category is required");
    for (const auto& m : methods) {
      if (m != "lime" && m != "shap") throw InvalidArgument("unknown method '" + m + "'");
    }
    if (!uses("lime") && !uses("shap")) throw InvalidArgument("no explanation method selected");
    if (uses("lime") && samples < segments + 2) {
      throw InvalidArgument("--samples must be >= --segments + 2 when lime is selected");
    }
    if (provider != "cache" && provider != "model") throw InvalidArgument("--provider must be 'cache' or 'model'");
    if (min_leaf < 1) throw InvalidArgument("--min-leaf must be >= 1");
    if (split != "test" && split != "train") throw InvalidArgument("--split must be 'test' or 'train'");
  }
};

inline std::unique_ptr<dataset::ReconstructionProvider> make_provider(const RunConfig& cfg) {
  if (cfg.provider == "model") {
    if (cfg.model.empty()) throw InvalidArgument("--model is required with --provider model");
    return dataset::inference_provider(cfg.model, cfg.side);
  }
  if (cfg.cache.empty()) throw InvalidArgument("--cache is required with --provider cache");
  return dataset::cached_provider(cfg.cache);
}

/// "test/crack/000" -> "test__crack__000"
inline std::string flat_id(const std::string& sample_id) {
  std::string out;
  for (char c : sample_id) {
    if (c == '/') {
      out += "__";
    } else {
      out += c;
    }
  }
  return out;
}

// FNV-1a; derives a per-sample seed independent of scheduling order.
inline std::uint64_t sample_seed(std::uint64_t seed, const std::string& sample_id) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : sample_id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h ^ seed;
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<dataset::SampleRecord> select_split(const RunConfig& cfg, std::ostream& log) {
  const dataset::DatasetListing listing = dataset::scan_dataset(cfg.dataset, cfg.category);
  for (const auto& w : listing.warnings) log << "warning: " << w << '\n';
  auto records = listing.split(cfg.split == "train" ? dataset::Split::train : dataset::Split::test);
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  return records;
}

// ---------------------------------------------------------------------------
// scores.csv: sample_id,category,defect_type,label,alpha

struct ScoreRow {
  std::string sample_id;
  std::string category;
  std::string defect_type;
  detector::Label label = detector::Label::good;
  double alpha = 0.0;
};

inline constexpr const char* kScoresHeader = "sample_id,category,defect_type,label,alpha";

inline std::string scores_csv(const std::vector<ScoreRow>& rows) {
  std::ostringstream out;
  out << kScoresHeader << '\n';
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.category << ',' << r.defect_type << ',' << detector::to_string(r.label) << ','
        << fmt(r.alpha) << '\n';
  }
  return out.str();
}

inline std::vector<ScoreRow> read_scores(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != kScoresHeader) throw IoError(path.string() + ": unexpected header");
  std::vector<ScoreRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 5) throw IoError(path.string() + ": malformed row '" + line + "'");
    rows.push_back({f[0], f[1], f[2], detector::parse_label(f[3]), std::stod(f[4])});
  }
  return rows;
}

inline std::vector<detector::ScoredSample> to_scored(const std::vector<ScoreRow>& rows) {
  std::vector<detector::ScoredSample> out;
  for (const auto& r : rows) out.push_back({r.sample_id, r.alpha, r.label});
  return out;
}

// ---------------------------------------------------------------------------
// Commands

/// Per-sample anomaly scores for the configured split -> <run>/scores.csv.
inline int cmd_detect(const RunConfig& cfg, std::ostream& log = std::cerr) {
  cfg.validate();
  const auto records = select_split(cfg, log);
  const auto provider = make_provider(cfg);
  std::vector<std::optional<ScoreRow>> rows(records.size());
  std::vector<std::string> errors(records.size());
  parallel_for(records.size(), provider->concurrent() ? cfg.jobs : 1, [&](std::size_t i) {
    const auto& rec = records[i];
    try {
      const auto sample = dataset::load_and_resize(rec, cfg.side);
      const RgbImage recon = provider->reconstruct_one(rec.sample_id, sample.image);
      const double alpha = anomaly_score(anomaly_map(sample.image, recon));
      rows[i] = ScoreRow{rec.sample_id, rec.category, rec.defect_type,
                         rec.is_good() ? detector::Label::good : detector::Label::anomalous, alpha};
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::vector<ScoreRow> ok;
  int failures = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (rows[i]) {
      ok.push_back(*rows[i]);
    } else {
      ++failures;
      log << "error: " << records[i].sample_id << ": " << errors[i] << '\n';
    }
  }
  write_text(cfg.run_dir() / "scores.csv", scores_csv(ok));
  log << "detect: " << ok.size() << " scored, " << failures << " failed -> " << (cfg.run_dir() / "scores.csv").string()
      << '\n';
  return failures ? kPartialFailure : kOk;
}

/// scores.csv -> calibration.json + roc.csv in out_dir.
inline int cmd_calibrate(const fs::path& scores, const fs::path& out_dir, std::ostream& log = std::cerr) {
  if (!fs::is_regular_file(scores)) {
    log << "error: scores file not found: " << scores.string() << '\n';
    return kUsageError;
  }
  detector::CalibrationResult result;
  try {
    result = detector::calibrate(to_scored(read_scores(scores)));
  } catch (const InvalidArgument& e) {
    log << "error: " << e.what() << '\n';
    return kUsageError;
  }
  write_text(out_dir / "calibration.json", detector::to_json(result).dump(2) + "\n");
  detector::write_roc_csv(out_dir / "roc.csv", result);
  log << "calibrate: tau* = " << fmt(result.tau_star) << ", objective = " << fmt(result.objective)
      << ", accuracy = " << fmt(result.confusion.accuracy()) << '\n';
  return kOk;
}

// localization.csv: sample_id,k,j_lime,theta_lime,j_shap,theta_shap
struct LocalizationRow {
  std::string sample_id;
  std::optional<std::size_t> k;
  std::optional<double> j_lime, theta_lime, j_shap, theta_shap;
};

inline constexpr const char* kLocalizationHeader = "sample_id,k,j_lime,theta_lime,j_shap,theta_shap";

inline std::string localization_csv(const std::vector<LocalizationRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  std::ostringstream out;
  out << kLocalizationHeader << '\n';
  for (const auto& r : rows) {
    out << r.sample_id << ',' << (r.k ? std::to_string(*r.k) : std::string()) << ',' << opt(r.j_lime) << ','
        << opt(r.theta_lime) << ',' << opt(r.j_shap) << ',' << opt(r.theta_shap) << '\n';
  }
  return out.str();
}

inline std::map<std::string, LocalizationRow> read_localization(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != kLocalizationHeader) throw IoError(path.string() + ": unexpected header");
  std::map<std::string, LocalizationRow> out;
  auto opt = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) f.push_back(field);
    f.resize(6);
    LocalizationRow r{f[0], {}, opt(f[2]), opt(f[3]), opt(f[4]), opt(f[5])};
    if (!f[1].empty()) r.k = static_cast<std::size_t>(std::stoull(f[1]));
    out.emplace(r.sample_id, r);
  }
  return out;
}

struct SampleExplanation {
  std::optional<lime::LimeExplanation> lime;
  std::optional<SegmentMap> segments;
  std::optional<shap::ShapExplanation> shap;
  std::optional<evaluation::LocalizationResult> loc_lime;
  std::optional<evaluation::LocalizationResult> loc_shap;
};

/// Explains one sample according to the run configuration.
inline SampleExplanation explain_sample(const RunConfig& cfg, const std::string& sample_id, const RgbImage& input,
                                        const RgbImage& recon, const std::optional<BinaryMask>& gt,
                                        std::size_t inner_jobs = 1) {
  SampleExplanation ex;
  const bool has_gt = gt && count(*gt) > 0;
  if (cfg.uses("lime")) {
    const auto calib = calibrate_quickshift(input, cfg.segments, QuickshiftParams::defaults_for_width(input.width()));
    if (cfg.setup == Setup::S2) {
      if (!has_gt) throw InvalidArgument("setup S2 needs a non-empty ground truth for " + sample_id);
      ex.segments = gt_aware_segmentation(input, *gt, calib.params);
    } else {
      ex.segments = quickshift(input, calib.params);
    }
    lime::ExplainOptions opts;
    opts.samples = std::max(cfg.samples, ex.segments->k() + 2);
    opts.seed = sample_seed(cfg.seed, sample_id);
    opts.jobs = inner_jobs;
    ex.lime = lime::explain(input, recon, *ex.segments, opts);
    if (has_gt) ex.loc_lime = evaluation::optimal_jaccard(ex.lime->pixel_attribution, *gt);
  }
  if (cfg.uses("shap")) {
    const auto tree = shap::build_partition_tree(input.height(), input.width(), cfg.min_leaf);
    ex.shap = shap::partition_attribution(input, recon, tree, std::max(cfg.samples, 2 * tree.levels()));
    if (has_gt) ex.loc_shap = evaluation::optimal_jaccard(ex.shap->pixel_attribution, *gt);
  }
  return ex;
}

/// Explanation rasters, localization results and panels for the split.
inline int cmd_explain(const RunConfig& cfg, std::ostream& log = std::cerr) {
  cfg.validate();
  const auto records = select_split(cfg, log);
  const auto provider = make_provider(cfg);
  const fs::path run = cfg.run_dir();
  const fs::path expl_dir = run / "explanations";
  const fs::path panel_dir = run / "panels";
  fs::create_directories(expl_dir);
  fs::create_directories(panel_dir);

  std::vector<std::optional<LocalizationRow>> rows(records.size());
  std::vector<std::string> errors(records.size());
  std::vector<char> skipped(records.size(), 0);

  // Reconstructions are fetched up front when the provider is single-consumer.
  std::vector<std::optional<RgbImage>> recons(records.size());
  std::vector<std::optional<dataset::LoadedSample>> loaded(records.size());
  auto fetch = [&](std::size_t i) {
    loaded[i] = dataset::load_and_resize(records[i], cfg.side);
    recons[i] = provider->reconstruct_one(records[i].sample_id, loaded[i]->image);
  };
  if (!provider->concurrent()) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      try {
        fetch(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  }

  parallel_for(records.size(), cfg.jobs, [&](std::size_t i) {
    const auto& rec = records[i];
    try {
      if (!errors[i].empty()) return;
      if (!recons[i]) fetch(i);
      if (cfg.setup == Setup::S2 && rec.is_good()) {
        skipped[i] = 1;  // ground-truth-aware segmentation is undefined for good samples
        return;
      }
      const RgbImage& input = loaded[i]->image;
      const RgbImage& recon = *recons[i];
      const std::optional<BinaryMask>& gt = loaded[i]->mask;
      const SampleExplanation ex = explain_sample(cfg, rec.sample_id, input, recon, gt);
      const std::string id = flat_id(rec.sample_id);
      const ScalarMap m = anomaly_map(input, recon);

      LocalizationRow row{rec.sample_id, {}, {}, {}, {}, {}};
      if (ex.lime) {
        save_f32(expl_dir / (id + "_lime.f32"), ex.lime->pixel_attribution);
        save_png(expl_dir / (id + "_lime.png"), heatmap(ex.lime->pixel_attribution));
        lime::write_coefficients_csv(expl_dir / (id + "_lime.csv"), *ex.lime);
        write_text(expl_dir / (id + "_segments.rle"), to_rle(*ex.segments));
        row.k = ex.segments->k();
      }
      if (ex.shap) {
        save_f32(expl_dir / (id + "_shap.f32"), ex.shap->pixel_attribution);
        save_png(expl_dir / (id + "_shap.png"), heatmap(ex.shap->pixel_attribution));
        const auto tree = shap::build_partition_tree(input.height(), input.width(), cfg.min_leaf);
        shap::write_trace_jsonl(expl_dir / (id + "_shap_trace.jsonl"), tree, *ex.shap);
      }
      if (ex.loc_lime) {
        row.j_lime = ex.loc_lime->j_star;
        row.theta_lime = ex.loc_lime->theta_star;
      }
      if (ex.loc_shap) {
        row.j_shap = ex.loc_shap->j_star;
        row.theta_shap = ex.loc_shap->theta_star;
      }
      render::PanelInputs panel{input, recon, m, {}, {}, ex.loc_lime, ex.loc_shap, gt};
      if (ex.lime) panel.beta_lime = ex.lime->pixel_attribution;
      if (ex.shap) panel.beta_shap = ex.shap->pixel_attribution;
      render::write_panels(panel_dir / (id + ".png"), panel);
      rows[i] = row;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::vector<LocalizationRow> ok;
  int failures = 0;
  std::size_t skipped_count = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (rows[i]) {
      ok.push_back(*rows[i]);
    } else if (skipped[i]) {
      ++skipped_count;
    } else {
      ++failures;
      log << "error: " << records[i].sample_id << ": " << errors[i] << '\n';
    }
  }
  write_text(run / "localization.csv", localization_csv(ok));
  log << "explain: " << ok.size() << " explained, " << skipped_count << " skipped, " << failures << " failed -> "
      << run.string() << '\n';
  return failures ? kPartialFailure : kOk;
}

/// Aggregates scores, calibration and localization into report.csv,
/// scatter.json and summary.json.
inline int cmd_report(const fs::path& run_dir, std::ostream& log = std::cerr) {
  const fs::path scores = run_dir / "scores.csv";
  const fs::path calibration = run_dir / "calibration.json";
  const fs::path localization = run_dir / "localization.csv";
  if (!fs::is_regular_file(scores) || !fs::is_regular_file(calibration)) {
    log << "error: " << run_dir.string() << " needs scores.csv (detect) and calibration.json (calibrate)\n";
    return kUsageError;
  }
  const auto score_rows = read_scores(scores);
  const auto calib = detector::calibration_from_json(nlohmann::json::parse(read_text(calibration)));
  std::map<std::string, LocalizationRow> loc;
  if (fs::is_regular_file(localization)) loc = read_localization(localization);
  const std::string setup = run_dir.filename().string();

  std::vector<evaluation::SampleReportRow> rows;
  for (const auto& s : score_rows) {
    evaluation::SampleReportRow r;
    r.sample_id = s.sample_id;
    r.category = s.category;
    r.setup = setup;
    r.alpha = s.alpha;
    r.verdict = detector::classify(s.alpha, calib.tau_star);
    r.label = s.label;
    if (auto it = loc.find(s.sample_id); it != loc.end() && s.label == detector::Label::anomalous) {
      r.j_lime = it->second.j_lime;
      r.j_shap = it->second.j_shap;
      r.theta_lime = it->second.theta_lime;
      r.theta_shap = it->second.theta_shap;
    }
    rows.push_back(std::move(r));
  }
  evaluation::scatter_report(run_dir, rows, calib.tau_star);
  auto summary = evaluation::summary_json(rows, calib.tau_star);
  write_text(run_dir / "summary.json", summary.dump(2) + "\n");
  log << "report: " << rows.size() << " rows, accuracy " << summary["accuracy"].dump() << '\n';
  return kOk;
}

}  // namespace anomex::pipeline
