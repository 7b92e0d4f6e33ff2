#include "mmttt/metrics.hpp"

#include "mmttt/errors.hpp"

namespace mmttt {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

ClassMetrics class_metrics(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassMetrics m;
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  const double s = m.precision + m.recall;
  m.f1 = s == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / s;
  m.support = tp + fn;
  return m;
}

}  // namespace

MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw DimensionError("compute_metrics: " + std::to_string(predictions.size()) +
                         " predictions vs " + std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw UsageError("compute_metrics: no samples");
  // confusion[label][prediction]
  std::size_t confusion[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((labels[i] != 0 && labels[i] != 1) || (predictions[i] != 0 && predictions[i] != 1))
      throw IndexError("compute_metrics: labels and predictions must be 0 or 1");
    ++confusion[labels[i]][predictions[i]];
  }
  MetricsReport r;
  r.total = labels.size();
  r.accuracy = ratio(confusion[0][0] + confusion[1][1], r.total);
  r.fake = class_metrics(confusion[1][1], confusion[0][1], confusion[1][0]);
  r.real = class_metrics(confusion[0][0], confusion[1][0], confusion[0][1]);
  r.macro_f1 = (r.fake.f1 + r.real.f1) / 2.0;
  return r;
}

MetricsReport mean_metrics(std::span<const MetricsReport> folds) {
  MetricsReport out;
  if (folds.empty()) return out;
  const double n = static_cast<double>(folds.size());
  auto add_class = [n](ClassMetrics& acc, const ClassMetrics& c) {
    acc.precision += c.precision / n;
    acc.recall += c.recall / n;
    acc.f1 += c.f1 / n;
    acc.support += c.support;
  };
  for (const auto& f : folds) {
    out.accuracy += f.accuracy / n;
    out.macro_f1 += f.macro_f1 / n;
    add_class(out.real, f.real);
    add_class(out.fake, f.fake);
    out.total += f.total;
  }
  return out;
}

}  // namespace mmttt
