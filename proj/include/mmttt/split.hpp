#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmttt/features.hpp"

namespace mmttt {

enum class SplitMode { kEventKFold, kTemporal };

enum class Side { kTrain, kTest };

struct Fold {
  std::vector<std::size_t> train;  // indices into the record list
  std::vector<std::size_t> test;
};

struct SplitPlan {
  SplitMode mode = SplitMode::kEventKFold;
  std::vector<Fold> folds;

  std::size_t fold_count() const { return folds.size(); }
  // video_id → side for one fold.
  std::map<std::string, Side> assignments(std::span<const FeatureRecord> records,
                                          std::size_t fold) const;
};

std::string to_string(SplitMode mode);
SplitMode split_mode_from_string(const std::string& name);

// Events are sorted by id, shuffled under `seed` and dealt round-robin into
// k groups; fold i tests on group i. Throws ConfigError with fewer than k events.
SplitPlan event_kfold_split(std::span<const FeatureRecord> records, std::size_t k,
                            std::uint64_t seed);

// Records sorted by (timestamp, video_id); the first floor(fraction·n) train.
SplitPlan temporal_split(std::span<const FeatureRecord> records, double train_fraction);

}  // namespace mmttt
