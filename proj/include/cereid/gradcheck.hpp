#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cereid/tensor.hpp"

namespace cereid {

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradError> per_param;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Compares each parameter's stored `grad` (the analytic gradient, filled by
/// the caller beforehand) against central differences of `loss`.
///
/// Relative error per element is |a - n| / max(|a|, |n|, 1e-8). `loss` must be
/// deterministic and must not touch the parameters' `grad` buffers. Values are
/// restored exactly after each probe.
GradCheckReport finite_diff_check(const std::function<double()>& loss, std::span<Param* const> params,
                                  double tolerance, double step = 1e-5);

}  // namespace cereid
