#pragma once

#include <cstdint>

#include "mer/tensor.hpp"

namespace mer {

struct OptimState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  Params m;
  Params v;
};

// Bias-corrected Adam step on every parameter named in `grads`; others are
// untouched. A non-finite gradient aborts the whole step (nothing changes)
// with a NumericError naming the parameter.
void adam_update(Params& params, const Params& grads, OptimState& state, double lr);

// Global L2 norm over all gradient tensors.
double global_norm(const Params& grads);
// Rescales so the global norm is at most max_norm; returns the norm before clipping.
double clip_global_norm(Params& grads, double max_norm);

}  // namespace mer
