#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "mmttt/engine.hpp"
#include "mmttt/synth.hpp"

namespace mmttt {

// Either an on-disk dataset directory or a synthetic generator config.
struct DatasetSource {
  std::string path;
  std::optional<ShiftConfig> synthetic;
};

struct SplitConfig {
  SplitMode mode = SplitMode::kEventKFold;
  std::size_t folds = 5;
  double train_fraction = 0.8;  // temporal mode
  std::uint64_t seed = 0;       // event shuffling
};

struct OutputConfig {
  std::string dir = "out";
  bool plots = true;
  bool predictions = true;
  bool checkpoints = false;
};

struct ExperimentConfig {
  DatasetSource dataset;
  ModelConfig model;
  TrainConfig train;
  SplitConfig split;
  OutputConfig output;
};

// Sections: dataset, model, train, ttt, split, ablation, output. Every key is
// optional; unknown keys and wrong types throw ConfigError naming the key.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// Full echo of every field, readable back by config_from_json.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
nlohmann::json shift_config_to_json(const ShiftConfig& cfg);
ShiftConfig shift_config_from_json(const nlohmann::json& j);

// Applies one --ablate value: ttt, mlm, trans, v or a.
void apply_ablation(Ablation& ablation, const std::string& name);

// Sets the training, split and synthetic-generator seeds together.
void apply_seed(ExperimentConfig& cfg, std::uint64_t seed);

// Loads or synthesizes the records. Throws DataError on invalid data.
Dataset materialize_dataset(const DatasetSource& source, const std::filesystem::path& base_dir = {});

SplitPlan make_split(const SplitConfig& cfg, std::span<const FeatureRecord> records);

}  // namespace mmttt
