#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "mer/layers.hpp"

namespace mer {

// Builds a scalar loss from leaves bound through the scope. Called once with
// trainable leaves (analytic pass) and repeatedly with constant leaves.
using LossBuilder = std::function<Var(Scope<double>&)>;

struct GradCheckOptions {
  double step = 1e-4;
  int samples_per_tensor = 6;  // <= 0 checks every entry
  std::uint64_t seed = 7;
  std::set<std::string> only;  // empty = every tensor in the map
  double tolerance = 1e-3;     // entries at or above it are listed in `over`
};

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0, numeric = 0.0, rel = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<name>[index]"
  int checked = 0;
  std::vector<GradCheckEntry> over;
};

// Max over sampled entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// with central differences.
GradCheckResult finite_diff_check(const ParamMap<double>& leaves, const LossBuilder& build,
                                  const GradCheckOptions& options = {});

double evaluate_loss(const ParamMap<double>& leaves, const LossBuilder& build);

// Central difference for one entry.
double numeric_derivative(const ParamMap<double>& leaves, const LossBuilder& build, const std::string& name,
                          std::size_t index, double step);

}  // namespace mer
