#pragma once

#include <cstddef>
#include <span>

namespace mmttt {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // true instances of the class
};

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  ClassMetrics real;
  ClassMetrics fake;
  std::size_t total = 0;
};

// Confusion-matrix metrics with fake = 1 as the positive class for `fake`
// and real = 0 for `real`. Zero denominators give 0, never NaN.
MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> labels);

// Field-wise mean over folds (supports and totals are summed).
MetricsReport mean_metrics(std::span<const MetricsReport> folds);

}  // namespace mmttt
