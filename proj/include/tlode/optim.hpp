#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tlode/tensor.hpp"

namespace tlode {

struct AdamConfig {
  double lr0 = 1e-3;
  double decay = 0.0;  // learning rate at step t is lr0 * exp(-decay * t)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m, v;
  std::uint64_t t = 0;  // completed steps
};

// Learning rate used by the step following `completed_steps` updates.
double adam_effective_lr(double lr0, double decay, std::uint64_t completed_steps);

// One Adam update, in place. `names` (optional, aligned with params) is used
// in error messages. A non-finite gradient rejects the whole step and throws
// NumericalError naming the offending parameter.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& cfg, const std::vector<std::string>& names = {});

}  // namespace tlode
