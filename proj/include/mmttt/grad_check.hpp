#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmttt/tensor.hpp"

namespace mmttt {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so gradients that are zero up
  // to rounding compare on an absolute scale of tolerance * floor.
  double floor = 1e-6;
};

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed = true;

  double max_relative_error() const;
  std::string summary() const;
};

// Compares analytic gradients of `loss_fn` with central finite differences
// for every element of every listed parameter. `loss_fn` must be a pure
// function of the parameter values and rebuild its graph on each call.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           std::span<const NamedTensor> params, GradCheckOptions options = {});

}  // namespace mmttt
