#include "mer/spectral.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>

namespace mer {

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecD = Eigen::VectorXd;

template <typename T>
MatD flatten(const Tensor<T>& w) {
  if (w.rank() < 1 || w.dim(0) < 1) throw ArgumentError("spectral norm of an empty weight");
  const Eigen::Index rows = w.dim(0);
  const Eigen::Index cols = static_cast<Eigen::Index>(w.size()) / rows;
  MatD m(rows, cols);
  for (std::size_t i = 0; i < w.size(); ++i) m.data()[i] = static_cast<double>(w[i]);
  return m;
}

void check_state(const MatD& m, const PowerIterState& state) {
  if (static_cast<Eigen::Index>(state.u.size()) != m.rows()) {
    throw ArgumentError("power-iteration state has " + std::to_string(state.u.size()) +
                        " entries for a weight with " + std::to_string(m.rows()) + " rows");
  }
}

}  // namespace

PowerIterState make_power_state(int rows, std::uint64_t seed) {
  if (rows < 1) throw ArgumentError("power-iteration state needs at least one row");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  PowerIterState st;
  st.u.resize(static_cast<std::size_t>(rows));
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : st.u) {
      x = dist(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : st.u) x /= norm;
  return st;
}

template <typename T>
double power_iterate(const Tensor<T>& weight, PowerIterState& state, int iterations) {
  const MatD m = flatten(weight);
  check_state(m, state);
  VecD u = Eigen::Map<const VecD>(state.u.data(), m.rows());
  for (int i = 0; i < iterations; ++i) {
    VecD v = m.transpose() * u;
    const double vn = v.norm();
    if (vn == 0.0) break;
    v /= vn;
    VecD nu = m * v;
    const double un = nu.norm();
    if (un == 0.0) break;
    u = nu / un;
    ++state.iterations;
  }
  std::copy(u.data(), u.data() + u.size(), state.u.begin());
  return (m.transpose() * u).norm();
}

template <typename T>
double spectral_sigma(const Tensor<T>& weight, const std::vector<double>& u) {
  const MatD m = flatten(weight);
  if (static_cast<Eigen::Index>(u.size()) != m.rows()) throw ArgumentError("u length mismatch");
  const VecD uv = Eigen::Map<const VecD>(u.data(), m.rows());
  return (m.transpose() * uv).norm();
}

template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, PowerIterState& state, int iterations) {
  const double sigma = std::max(power_iterate(weight, state, iterations), 1e-12);
  Tensor<T> out(weight.shape());
  for (std::size_t i = 0; i < weight.size(); ++i) {
    out[i] = static_cast<T>(static_cast<double>(weight[i]) / sigma);
  }
  return out;
}

template double power_iterate(const Tensor<float>&, PowerIterState&, int);
template double power_iterate(const Tensor<double>&, PowerIterState&, int);
template double spectral_sigma(const Tensor<float>&, const std::vector<double>&);
template double spectral_sigma(const Tensor<double>&, const std::vector<double>&);
template Tensor<float> spectral_normalize(const Tensor<float>&, PowerIterState&, int);
template Tensor<double> spectral_normalize(const Tensor<double>&, PowerIterState&, int);

}  // namespace mer
