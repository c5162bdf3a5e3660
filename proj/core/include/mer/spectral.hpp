#pragma once

#include <cstdint>
#include <vector>

#include "mer/tensor.hpp"

namespace mer {

// Power-iteration estimate of the top left singular vector of a weight
// flattened to [out, rest].
struct PowerIterState {
  std::vector<double> u;
  std::int64_t iterations = 0;
};

// Unit vector of length `rows` drawn from a seeded normal.
PowerIterState make_power_state(int rows, std::uint64_t seed);

// Runs `iterations` rounds of v = W^T u / |.|, u = W v / |.| and returns
// sigma = |W^T u| (= u^T W v) for the updated u. Zero vectors keep the previous u.
template <typename T>
double power_iterate(const Tensor<T>& weight, PowerIterState& state, int iterations);

// Weight divided by the estimated top singular value (floored at 1e-12).
template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, PowerIterState& state, int iterations);

// sigma = |W^T u| for a fixed u, no state change.
template <typename T>
double spectral_sigma(const Tensor<T>& weight, const std::vector<double>& u);

}  // namespace mer
