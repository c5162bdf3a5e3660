#include "mer/adam.hpp"

#include <cmath>

namespace mer {

void adam_update(Params& params, const Params& grads, OptimState& state, double lr) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ArgumentError("gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape()) {
      throw ArgumentError("gradient shape " + shape_string(g.shape()) + " for parameter '" + name + "' of shape " +
                          shape_string(it->second.shape()));
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) throw NumericError("non-finite gradient in parameter '" + name + "'");
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor<float>& p = params.at(name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.shape() != p.shape()) m = Tensor<float>(p.shape());
    if (v.shape() != p.shape()) v = Tensor<float>(p.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p[i] = static_cast<float>(p[i] - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

double global_norm(const Params& grads) {
  double acc = 0.0;
  for (const auto& [name, g] : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * g[i];
  }
  return std::sqrt(acc);
}

double clip_global_norm(Params& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (std::isfinite(norm) && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(g[i] * k);
    }
  }
  return norm;
}

}  // namespace mer
