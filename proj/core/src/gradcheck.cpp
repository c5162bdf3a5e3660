#include "mer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mer {

namespace {

double eval(const ParamMap<double>& leaves, const LossBuilder& build) {
  Graph<double> g;
  Scope<double> s(g, leaves, false);
  Var loss = build(s);
  if (g.value(loss).size() != 1) throw ArgumentError("loss builder must return a scalar");
  return g.value(loss)[0];
}

}  // namespace

GradCheckResult finite_diff_check(const ParamMap<double>& leaves, const LossBuilder& build,
                                  const GradCheckOptions& options) {
  Graph<double> g;
  Scope<double> s(g, leaves, true);
  Var loss = build(s);
  g.backward(loss);
  ParamMap<double> analytic = s.gradients();

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  ParamMap<double> work = leaves;
  for (auto& [name, tensor] : work) {
    if (!options.only.empty() && !options.only.count(name)) continue;
    std::vector<std::size_t> idx(tensor.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.samples_per_tensor > 0 && idx.size() > static_cast<std::size_t>(options.samples_per_tensor)) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(options.samples_per_tensor));
    }
    auto a_it = analytic.find(name);
    for (std::size_t i : idx) {
      const double a = a_it == analytic.end() ? 0.0 : a_it->second[i];
      const double orig = tensor[i];
      tensor[i] = orig + options.step;
      const double up = eval(work, build);
      tensor[i] = orig - options.step;
      const double down = eval(work, build);
      tensor[i] = orig;
      const double n = (up - down) / (2.0 * options.step);
      const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
      ++result.checked;
      if (rel >= options.tolerance) result.over.push_back({name, i, a, n, rel});
      if (rel > result.max_rel_error || result.worst.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst = name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  return result;
}

double evaluate_loss(const ParamMap<double>& leaves, const LossBuilder& build) { return eval(leaves, build); }

double numeric_derivative(const ParamMap<double>& leaves, const LossBuilder& build, const std::string& name,
                          std::size_t index, double step) {
  ParamMap<double> work = leaves;
  auto it = work.find(name);
  if (it == work.end()) throw ArgumentError("no leaf named '" + name + "'");
  if (index >= it->second.size()) throw ArgumentError("index out of range for '" + name + "'");
  const double orig = it->second[index];
  it->second[index] = orig + step;
  const double up = eval(work, build);
  it->second[index] = orig - step;
  const double down = eval(work, build);
  return (up - down) / (2.0 * step);
}

}  // namespace mer
