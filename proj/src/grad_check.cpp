#include "mmttt/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mmttt {

double GradCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_relative_error);
  return worst;
}

std::string GradCheckReport::summary() const {
  std::ostringstream out;
  out << (passed ? "pass" : "FAIL") << " max_rel=" << max_relative_error();
  for (const auto& e : entries) {
    out << "\n  " << e.name << ": " << e.max_relative_error << " at [" << e.worst_index
        << "] analytic=" << e.analytic << " numeric=" << e.numeric;
  }
  return out.str();
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           std::span<const NamedTensor> params, GradCheckOptions options) {
  std::vector<Tensor> tensors;
  for (const auto& p : params) {
    tensors.push_back(p.tensor);
    tensors.back().zero_grad();
  }
  backward(loss_fn());

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = tensors[k];
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    GradCheckEntry entry{params[k].name};
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      double plus, minus;
      {
        NoGradGuard no_grad;
        values[i] = original + options.step;
        plus = loss_fn().item();
        values[i] = original - options.step;
        minus = loss_fn().item();
      }
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel >= entry.max_relative_error) {
        entry.max_relative_error = rel;
        entry.worst_index = i;
        entry.analytic = analytic[i];
        entry.numeric = numeric;
      }
    }
    if (entry.max_relative_error >= options.tolerance) report.passed = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mmttt
