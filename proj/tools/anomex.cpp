// anomex: command-line front end for detection, calibration, explanation and
// reporting over MVTec-style datasets.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "anomex/pipeline.hpp"

namespace {

using anomex::pipeline::RunConfig;

void add_run_options(CLI::App& cmd, RunConfig& cfg, std::string& setup, std::vector<std::string>& methods) {
  cmd.add_option("--dataset", cfg.dataset, "Dataset root (MVTec layout)")->required();
  cmd.add_option("--category", cfg.category, "Category under the dataset root")->required();
  cmd.add_option("--provider", cfg.provider, "Reconstruction provider: cache | model")->capture_default_str();
  cmd.add_option("--cache", cfg.cache, "Reconstruction cache directory");
  cmd.add_option("--model", cfg.model, "ONNX encoder-decoder model file");
  cmd.add_option("--method", methods, "Explanation methods (lime, shap)")->delimiter(',');
  cmd.add_option("--setup", setup, "Evaluation setup: S1 | S2 | S3")->capture_default_str();
  cmd.add_option("--segments", cfg.segments, "Target superpixel count k")->capture_default_str();
  cmd.add_option("--samples", cfg.samples, "Perturbation budget n")->capture_default_str();
  cmd.add_option("--min-leaf", cfg.min_leaf, "SHAP partition leaf size in pixels")->capture_default_str();
  cmd.add_option("--jobs", cfg.jobs, "Parallel workers")->capture_default_str();
  cmd.add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  cmd.add_option("--side", cfg.side, "Input side length after resizing")->capture_default_str();
  cmd.add_option("--split", cfg.split, "Dataset split to process: test | train")->capture_default_str();
  cmd.add_option("--out", cfg.out, "Output root")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audit toolkit for reconstruction-based anomaly detection"};
  app.set_config("--config", "", "Plain-text key = value config file (flags override it)");
  app.require_subcommand(1);

  RunConfig cfg;
  std::string setup = "S1";
  std::vector<std::string> methods{"lime", "shap"};

  auto* detect = app.add_subcommand("detect", "Compute per-sample anomaly scores");
  add_run_options(*detect, cfg, setup, methods);

  auto* explain = app.add_subcommand("explain", "Compute explanations, localization and panels");
  add_run_options(*explain, cfg, setup, methods);

  auto* calibrate = app.add_subcommand("calibrate", "Fit the optimal detection threshold");
  std::string scores;
  std::string out_dir;
  calibrate->add_option("--scores", scores, "scores.csv (defaults to the run directory's)");
  calibrate->add_option("--calibration-dir", out_dir, "Output directory (defaults to the scores file's directory)");
  calibrate->add_option("--category", cfg.category, "Category (locates the run directory)");
  calibrate->add_option("--setup", setup, "Setup (locates the run directory)")->capture_default_str();
  calibrate->add_option("--out", cfg.out, "Output root")->capture_default_str();

  auto* report = app.add_subcommand("report", "Aggregate a run into report.csv and summary.json");
  std::string run_dir;
  report->add_option("--run", run_dir, "Run directory (defaults to <out>/<category>/<setup>)");
  report->add_option("--category", cfg.category, "Category (locates the run directory)");
  report->add_option("--setup", setup, "Setup (locates the run directory)")->capture_default_str();
  report->add_option("--out", cfg.out, "Output root")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; every other parse failure is a usage error.
    return app.exit(e) == 0 ? 0 : anomex::pipeline::kUsageError;
  }

  try {
    cfg.setup = anomex::pipeline::parse_setup(setup);
    cfg.methods = {methods.begin(), methods.end()};
    if (*detect) return anomex::pipeline::cmd_detect(cfg);
    if (*explain) return anomex::pipeline::cmd_explain(cfg);
    if (*calibrate) {
      const std::filesystem::path scores_path = scores.empty() ? cfg.run_dir() / "scores.csv" : std::filesystem::path(scores);
      const std::filesystem::path dir = out_dir.empty() ? scores_path.parent_path() : std::filesystem::path(out_dir);
      return anomex::pipeline::cmd_calibrate(scores_path, dir);
    }
    if (*report) return anomex::pipeline::cmd_report(run_dir.empty() ? cfg.run_dir() : std::filesystem::path(run_dir));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return anomex::pipeline::kUsageError;
  }
  return anomex::pipeline::kUsageError;
}
