#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmttt/config.hpp"

namespace mmttt {

nlohmann::json metrics_to_json(const MetricsReport& m);
nlohmann::json phase_to_json(const PhaseReport& p);

// Report bundle: config echo, per-fold metrics, checksums and phase timings,
// and the fold-mean metrics.
nlohmann::json result_to_json(const ExperimentResult& result, const ExperimentConfig& cfg);

struct ExperimentRun {
  Dataset dataset;
  SplitPlan split;
  ExperimentResult result;
};

// Materializes the dataset, splits it and runs the pipeline. When `out_dir`
// is non-empty, writes report.json (plus predictions.csv and fold checkpoints
// when enabled in cfg.output).
ExperimentRun run_experiment(const ExperimentConfig& cfg, std::size_t jobs = 1,
                             const std::filesystem::path& out_dir = {});

enum class SweepParam { kAlpha, kMaskRatio };
std::string to_string(SweepParam p);
SweepParam sweep_param_from_string(const std::string& name);

struct SweepPoint {
  double value = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;         // fold-mean accuracy per seed
  std::vector<double> macro_f1s;
  std::vector<double> final_train_losses;  // last-epoch total loss, fold mean, per seed
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
  double mean_final_train_loss = 0.0;
  double std_final_train_loss = 0.0;
  double seconds = 0.0;
  double cumulative_seconds = 0.0;
};

struct SweepResult {
  SweepParam param = SweepParam::kAlpha;
  double pinned_value = 0.0;  // m = 0.15 for alpha sweeps, alpha = 1 for mask-ratio sweeps
  std::vector<SweepPoint> points;
};

inline constexpr double kSweepPinnedMaskRatio = 0.15;
inline constexpr double kSweepPinnedAlpha = 1.0;

// One experiment per (value, seed) with the other hyper-parameter pinned.
// Seeds run from cfg.train.seed upward. Needs at least 2 values.
SweepResult sweep(const ExperimentConfig& cfg, SweepParam param, std::span<const double> values,
                  std::size_t seeds = 1, std::size_t jobs = 1,
                  const std::function<void(const SweepPoint&)>& progress = {});

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result);
nlohmann::json sweep_to_json(const SweepResult& result);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // optional symmetric error bars
};

// Standalone SVG line chart.
std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          std::span<const PlotSeries> series);
void write_sweep_svg(const std::filesystem::path& path, const SweepResult& result);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace mmttt
