#include "mmttt/split.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include "mmttt/errors.hpp"

namespace mmttt {

std::map<std::string, Side> SplitPlan::assignments(std::span<const FeatureRecord> records,
                                                    std::size_t fold) const {
  std::map<std::string, Side> out;
  const Fold& f = folds.at(fold);
  for (auto i : f.train) out[records[i].sample.video_id] = Side::kTrain;
  for (auto i : f.test) out[records[i].sample.video_id] = Side::kTest;
  return out;
}

std::string to_string(SplitMode mode) {
  return mode == SplitMode::kEventKFold ? "event-5fold" : "temporal";
}

SplitMode split_mode_from_string(const std::string& name) {
  if (name == "event-5fold" || name == "event-kfold" || name == "event") return SplitMode::kEventKFold;
  if (name == "temporal") return SplitMode::kTemporal;
  throw ConfigError("unknown split mode '" + name + "'");
}

SplitPlan event_kfold_split(std::span<const FeatureRecord> records, std::size_t k,
                            std::uint64_t seed) {
  if (k < 2) throw ConfigError("event_kfold_split: k must be >= 2");
  std::vector<std::string> events;
  for (const auto& r : records) events.push_back(r.sample.event_id);
  std::sort(events.begin(), events.end());
  events.erase(std::unique(events.begin(), events.end()), events.end());
  if (events.size() < k) {
    throw ConfigError("event_kfold_split: " + std::to_string(events.size()) +
                      " distinct events, need at least k = " + std::to_string(k));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(events.begin(), events.end(), rng);
  std::unordered_map<std::string, std::size_t> group;
  for (std::size_t i = 0; i < events.size(); ++i) group[events[i]] = i % k;

  SplitPlan plan{SplitMode::kEventKFold, std::vector<Fold>(k)};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::size_t g = group.at(records[i].sample.event_id);
    for (std::size_t f = 0; f < k; ++f) (f == g ? plan.folds[f].test : plan.folds[f].train).push_back(i);
  }
  return plan;
}

SplitPlan temporal_split(std::span<const FeatureRecord> records, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ConfigError("temporal_split: train_fraction must lie in (0, 1]");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& sa = records[a].sample;
    const auto& sb = records[b].sample;
    if (sa.timestamp != sb.timestamp) return sa.timestamp < sb.timestamp;
    return sa.video_id < sb.video_id;
  });
  // The small epsilon keeps products like 0.8 * 10 from landing just below an integer.
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(records.size()) + 1e-9));
  if (n_train == 0) throw ConfigError("temporal_split: empty training set");
  if (n_train >= records.size()) throw ConfigError("temporal_split: empty test set");
  Fold fold;
  fold.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  fold.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return SplitPlan{SplitMode::kTemporal, {std::move(fold)}};
}

}  // namespace mmttt
