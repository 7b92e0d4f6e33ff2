#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmttt/adam.hpp"
#include "mmttt/errors.hpp"
#include "mmttt/metrics.hpp"
#include "mmttt/model.hpp"
#include "mmttt/split.hpp"

namespace mmttt {

enum class TttMode { kOffline, kOnlineBatch };
std::string to_string(TttMode mode);
TttMode ttt_mode_from_string(const std::string& name);

struct TrainConfig {
  double alpha = 1.0;
  double mask_ratio = 0.15;
  std::size_t batch_size = 16;
  std::size_t train_epochs = 10;
  double train_lr = 1e-4;
  double ttt_lr = 1e-5;
  std::size_t ttt_epochs = 2;
  TttMode ttt_mode = TttMode::kOffline;
  bool reset_between_batches = true;
  std::uint64_t seed = 0;
  Ablation ablation;
  AdamOptions adam;  // lr is overridden by train_lr / ttt_lr

  bool operator==(const TrainConfig&) const = default;
};

// Throws ConfigError on a broken invariant.
void validate_train_config(const TrainConfig& cfg);

// Deterministic stream seeds: splitmix64 over (base, tags...).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b = 0,
                          std::uint64_t tag_c = 0);

// Tags for derive_seed, one per rng stream of a pipeline run.
enum SeedTag : std::uint64_t {
  kInitTag = 1,
  kShuffleTag = 2,
  kTrainMaskTag = 3,
  kTttShuffleTag = 4,
  kTttMaskTag = 5,
  kEvalMaskTag = 6,
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double fnd_loss = 0.0;    // sample mean of L_FND
  double mlm_loss = 0.0;    // sample mean of L_MLM over samples that had a masked term
  double total_loss = 0.0;  // sample mean of L_FND + α·L_MLM
  double seconds = 0.0;
};

struct PhaseReport {
  std::string phase;
  std::vector<EpochStats> epochs;
  std::map<std::string, std::string> checksums_before;  // partition name → checksum
  std::map<std::string, std::string> checksums_after;
  // Per optimizer step: L2 norm of the decoder-partition gradient.
  std::vector<double> decoder_grad_norms;
  // Test-pool L_MLM under fixed evaluation masks (ttt phase only).
  std::optional<double> mlm_before;
  std::optional<double> mlm_after;
  double seconds = 0.0;
};

class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, PhaseReport report)
      : DivergenceError(what), report_(std::move(report)) {}
  const PhaseReport& report() const { return report_; }

 private:
  PhaseReport report_;
};

struct Prediction {
  std::string video_id;
  double p_fake = 0.0;
  int label = 0;  // 1 iff p_fake >= 0.5
};

// Minimizes L_FND + α·L_MLM over every partition with Adam. Per-sample masks
// come from derive_seed(cfg.seed, kTrainMaskTag, epoch, index-in-train-set).
PhaseReport train(Model& model, std::span<const FeatureRecord> records, const TrainConfig& cfg);

// Called per adapted batch in online mode with that batch's predictions.
using PredictionSink = std::function<void(std::span<const std::size_t> indices,
                                          std::span<const Prediction> predictions)>;

// Test-time training: minimizes L_MLM over the encoder and decoder partitions
// only; the classifier partition is left bitwise unchanged. Labels are not
// available here by type.
PhaseReport ttt_adapt(Model& model, std::span<const VideoSample> samples, const TrainConfig& cfg,
                      const PredictionSink& sink = {});

// Frozen, unmasked forward pass. Ties (p = 0.5) predict fake.
std::vector<Prediction> predict(const Model& model, std::span<const VideoSample> samples,
                                const Ablation& ablation = {});

// Mean L_MLM over `samples` with masks from derive_seed(seed, kEvalMaskTag, index).
double evaluate_mlm(const Model& model, std::span<const VideoSample> samples, double mask_ratio,
                    std::uint64_t seed, const Ablation& ablation = {});

struct FoldResult {
  std::size_t fold = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  MetricsReport metrics;
  PhaseReport train_report;
  std::optional<PhaseReport> ttt_report;
  std::map<std::string, std::string> final_checksums;
  std::vector<Prediction> predictions;
  double seconds = 0.0;
};

struct ExperimentResult {
  TrainConfig train_config;
  ModelConfig model_config;
  SplitMode split_mode = SplitMode::kEventKFold;
  std::vector<FoldResult> folds;
  MetricsReport mean;
  double accuracy_std = 0.0;
  double seconds = 0.0;
};

// Receives each fold's final model (may be called from worker threads).
using FoldModelHook = std::function<void(std::size_t fold, const Model& model)>;

// Per fold: initialize → train → ttt_adapt (unless no_ttt or no_mlm) →
// predict → metrics. Folds run on up to `jobs` threads; results do not
// depend on `jobs`.
ExperimentResult run_pipeline(const DatasetHeader& header, std::span<const FeatureRecord> records,
                              const SplitPlan& split, const TrainConfig& cfg,
                              const ModelConfig& model_config, std::size_t jobs = 1,
                              const FoldModelHook& on_fold_model = {});

}  // namespace mmttt
