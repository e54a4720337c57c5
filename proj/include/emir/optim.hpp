#pragma once

#include <map>
#include <string>
#include <vector>

#include "emir/params.hpp"

namespace emir {

struct AdamConfig {
  double lr_init = 2e-4;
  double lr_min = 1e-7;
  std::int64_t total_steps = 200000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig cfg;
  std::int64_t step = 0;  // completed steps
  std::map<std::string, std::vector<double>> m, v;
};

// lr_min + (lr_init - lr_min) * (1 + cos(pi * t/T)) / 2, clamped at T
double cosine_lr(const AdamConfig& cfg, std::int64_t step);

// Standard bias-corrected Adam on every parameter, learning rate from the
// cosine schedule at the pre-update step count. Throws on NaN gradients
// without touching any parameter.
void adam_step(ParamStore& params, OptimizerState& state);

}  // namespace emir
