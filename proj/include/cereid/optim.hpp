#pragma once

#include <span>

#include "cereid/tensor.hpp"

namespace cereid {

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update on every parameter; increments step_count.
void adam_step(std::span<Param* const> params, const AdamOptions& options);

}  // namespace cereid
