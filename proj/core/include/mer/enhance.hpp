#pragma once

#include <cstdint>
#include <vector>

#include "mer/image.hpp"
#include "mer/layers.hpp"

namespace mer {

struct EnhanceHyper {
  int rounds = 6;           // T
  double alpha = 1.5;       // fidelity weight
  double beta = 1.0;        // smoothness weight
  double sigma = 0.1;       // Gaussian kernel std of the smoothness weights
  double eps_div = 1e-4;    // floor for x before dividing
  int channels = 16;        // hidden width of H and K

  void validate() const;
};

// conv3x3 3->C, relu, conv3x3 C->C, relu, conv3x3 C->3 under `prefix` ("enh.h" or "enh.k").
Network enhance_network(const std::string& prefix, int channels);

// Seeded init of enh.h.* and enh.k.*. Output layers start at zero, so the
// untrained cascade is the identity chain x = y, s = 0.
void init_enhance(Params& params, const EnhanceHyper& hyper, std::uint64_t seed);

// Hidden width stored in a parameter map (from enh.h.l0.weight).
int enhance_channels(const Params& params);

// Graph-level cascade. Round t holds v^t, u^t, x^{t+1}, z^{t+1} and s^t (s^0 = 0).
template <typename T>
struct EnhanceVars {
  Var y;
  std::vector<Var> v, u, x, z, s;
};

template <typename T>
EnhanceVars<T> enhance_graph(Scope<T>& scope, Var y, const EnhanceHyper& hyper);

// alpha * sum_t fid_t + beta * sum_t smooth_t over rounds t = 1..T with
//   fid_t    = sum_c (x^t - (y + s^{t-1}))^2 averaged over pixels
//   smooth_t = sum_i sum_{j in N4(i)} w_ij sum_c |x^t_i - x^t_j| averaged over pixels
//   w_ij     = exp(-|yuv(y + s^{t-1})_i - yuv(y + s^{t-1})_j|^2 / (2 sigma^2))
template <typename T>
Var enhancement_loss(Graph<T>& g, Var y, const std::vector<Var>& x, const std::vector<Var>& s,
                     const EnhanceHyper& hyper);

template <typename T>
Var enhancement_loss(Graph<T>& g, const EnhanceVars<T>& vars, const EnhanceHyper& hyper) {
  return enhancement_loss(g, vars.y, vars.x, vars.s, hyper);
}

// ---- image-level API ----

struct EnhanceRound {
  Image v;  // v^t
  Image u;  // u^t
  Image x;  // x^{t+1}
  Image z;  // z^{t+1}
  Image s;  // s^t
};

struct EnhanceTrace {
  Image y;
  std::vector<EnhanceRound> rounds;
};

struct EnhanceResult {
  Image enhanced;
  EnhanceTrace trace;
};

// u = H(v); x = max(v + u, eps).
std::pair<Image, Image> enhance_round(const Image& v, const Params& params, const EnhanceHyper& hyper);
// z = y / max(x, eps); s = K(z); v = y + s. Returned as (z, v, s).
std::tuple<Image, Image, Image> calibrate_round(const Image& x, const Image& y, const Params& params,
                                                const EnhanceHyper& hyper);

EnhanceResult run_enhancement(const Image& y, const Params& params, const EnhanceHyper& hyper);
Image enhance_image(const Image& y, const Params& params, const EnhanceHyper& hyper);

// Batched inference on an NCHW tensor; returns clamp(y / x^T, 0, 1).
Tensor<float> enhance_tensor(const Tensor<float>& y, const Params& params, const EnhanceHyper& hyper);

// Loss of a recorded trace, evaluated in double precision.
double enhancement_loss(const EnhanceTrace& trace, const EnhanceHyper& hyper);

// Smoothness weight between two RGB pixels.
double smoothness_weight(const float* a, const float* b, double sigma);

}  // namespace mer
