#include "mer/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace mer {

namespace {

template <typename T>
Tensor<T> yuv_weight() {
  Tensor<T> w({3, 3, 1, 1});
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 3; ++i) w[static_cast<std::size_t>(o * 3 + i)] = static_cast<T>(kYuvFromRgb[o][i]);
  return w;
}

// Sum over edges along `axis` of w_ij * sum_c |x_i - x_j|.
template <typename T>
Var edge_term(Graph<T>& g, Var x, Var yuv, int axis, double sigma) {
  Var dyuv = shift_diff(g, yuv, axis);
  Var w = exp(g, scale(g, sum_channels(g, square(g, dyuv)), -1.0 / (2.0 * sigma * sigma)));
  Var dx = sum_channels(g, abs(g, shift_diff(g, x, axis)));
  return sum(g, mul(g, w, dx));
}


}  // namespace

void EnhanceHyper::validate() const {
  if (rounds < 1) throw ArgumentError("enhancement needs at least one round");
  if (!(alpha > 0) || !(beta > 0)) throw ArgumentError("alpha and beta must be positive");
  if (!(sigma > 0)) throw ArgumentError("sigma must be positive");
  if (!(eps_div > 0)) throw ArgumentError("eps_div must be positive");
  if (channels < 1) throw ArgumentError("enhancement width must be positive");
}

Network enhance_network(const std::string& prefix, int channels) {
  return {
      {LayerKind::Conv3x3, 3, channels, prefix + ".l0"},
      {LayerKind::Relu, channels, channels, ""},
      {LayerKind::Conv3x3, channels, channels, prefix + ".l1"},
      {LayerKind::Relu, channels, channels, ""},
      {LayerKind::Conv3x3, channels, 3, prefix + ".l2"},
  };
}

void init_enhance(Params& params, const EnhanceHyper& hyper, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const char* prefix : {"enh.h", "enh.k"}) {
    init_network(enhance_network(prefix, hyper.channels), params, rng);
    params.at(std::string(prefix) + ".l2.weight").fill(0.0f);
  }
}

int enhance_channels(const Params& params) {
  auto it = params.find("enh.h.l0.weight");
  if (it == params.end()) throw LoadError("missing tensor enh.h.l0.weight");
  return it->second.dim(0);
}

template <typename T>
EnhanceVars<T> enhance_graph(Scope<T>& scope, Var y, const EnhanceHyper& hyper) {
  hyper.validate();
  Graph<T>& g = scope.graph();
  const Network h = enhance_network("enh.h", hyper.channels);
  const Network k = enhance_network("enh.k", hyper.channels);
  EnhanceVars<T> out;
  out.y = y;
  Var v = y;
  Var s = g.constant(Tensor<T>(g.shape(y)));
  for (int t = 0; t < hyper.rounds; ++t) {
    Var u = forward_sequence(scope, h, v);
    Var x = floor_at(g, add(g, v, u), hyper.eps_div);
    Var z = div(g, y, x);
    out.v.push_back(v);
    out.u.push_back(u);
    out.x.push_back(x);
    out.z.push_back(z);
    out.s.push_back(s);
    if (t + 1 < hyper.rounds) {
      s = forward_sequence(scope, k, z);
      v = add(g, y, s);
    }
  }
  return out;
}

template <typename T>
Var enhancement_loss(Graph<T>& g, Var y, const std::vector<Var>& x, const std::vector<Var>& s,
                     const EnhanceHyper& hyper) {
  hyper.validate();
  if (x.size() != static_cast<std::size_t>(hyper.rounds) || s.size() != x.size()) {
    throw StateError("enhancement trace has " + std::to_string(x.size()) + " rounds, expected " +
                     std::to_string(hyper.rounds));
  }
  const Shape& ys = g.shape(y);
  const double pixels = static_cast<double>(ys[0]) * ys[2] * ys[3];
  Var wyuv = g.constant(yuv_weight<T>());
  Var total;
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (!x[t].valid() || !s[t].valid()) throw StateError("enhancement trace round " + std::to_string(t) + " is empty");
    Var ref = add(g, y, s[t]);
    Var fid = scale(g, sum(g, square(g, sub(g, x[t], ref))), hyper.alpha / pixels);
    Var yuv = conv2d(g, ref, wyuv, Var{}, 1, 0);
    Var smooth = add(g, edge_term(g, x[t], yuv, 3, hyper.sigma), edge_term(g, x[t], yuv, 2, hyper.sigma));
    // each undirected edge appears once from each endpoint
    Var term = add(g, fid, scale(g, smooth, 2.0 * hyper.beta / pixels));
    total = total.valid() ? add(g, total, term) : term;
  }
  return total;
}

std::pair<Image, Image> enhance_round(const Image& v, const Params& params, const EnhanceHyper& hyper) {
  if (v.channels() != 3) throw ArgumentError("enhance_round needs a 3-channel image");
  EnhanceHyper hp = hyper;
  hp.channels = enhance_channels(params);
  Graph<float> g;
  Scope<float> scope(g, params, false);
  Var vv = g.constant(image_to_tensor<float>(v));
  Var u = forward_sequence(scope, enhance_network("enh.h", hp.channels), vv);
  Var x = floor_at(g, add(g, vv, u), hp.eps_div);
  return {tensor_to_image(g.value(u)), tensor_to_image(g.value(x))};
}

std::tuple<Image, Image, Image> calibrate_round(const Image& x, const Image& y, const Params& params,
                                                const EnhanceHyper& hyper) {
  if (!x.same_shape(y) || y.channels() != 3) throw ArgumentError("calibrate_round: shape mismatch");
  EnhanceHyper hp = hyper;
  hp.channels = enhance_channels(params);
  Graph<float> g;
  Scope<float> scope(g, params, false);
  Var yv = g.constant(image_to_tensor<float>(y));
  Var xv = floor_at(g, g.constant(image_to_tensor<float>(x)), hp.eps_div);
  Var z = div(g, yv, xv);
  Var s = forward_sequence(scope, enhance_network("enh.k", hp.channels), z);
  Var v = add(g, yv, s);
  return {tensor_to_image(g.value(z)), tensor_to_image(g.value(v)), tensor_to_image(g.value(s))};
}

EnhanceResult run_enhancement(const Image& y, const Params& params, const EnhanceHyper& hyper) {
  if (y.channels() != 3) throw ArgumentError("enhancement needs a 3-channel image");
  EnhanceHyper hp = hyper;
  hp.channels = enhance_channels(params);
  Graph<float> g;
  Scope<float> scope(g, params, false);
  EnhanceVars<float> vars = enhance_graph(scope, g.constant(image_to_tensor<float>(y)), hp);
  EnhanceResult result;
  result.trace.y = y;
  for (int t = 0; t < hp.rounds; ++t) {
    EnhanceRound r;
    r.v = tensor_to_image(g.value(vars.v[t]));
    r.u = tensor_to_image(g.value(vars.u[t]));
    r.x = tensor_to_image(g.value(vars.x[t]));
    r.z = tensor_to_image(g.value(vars.z[t]));
    r.s = tensor_to_image(g.value(vars.s[t]));
    result.trace.rounds.push_back(std::move(r));
  }
  result.enhanced = clamp01(result.trace.rounds.back().z);
  return result;
}

Image enhance_image(const Image& y, const Params& params, const EnhanceHyper& hyper) {
  return tensor_to_image(enhance_tensor(image_to_tensor<float>(y), params, hyper));
}

Tensor<float> enhance_tensor(const Tensor<float>& y, const Params& params, const EnhanceHyper& hyper) {
  EnhanceHyper hp = hyper;
  hp.channels = enhance_channels(params);
  Graph<float> g;
  Scope<float> scope(g, params, false);
  EnhanceVars<float> vars = enhance_graph(scope, g.constant(y), hp);
  Tensor<float> out = g.value(vars.z.back());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = out[i];
    out[i] = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  }
  return out;
}

double enhancement_loss(const EnhanceTrace& trace, const EnhanceHyper& hyper) {
  if (trace.rounds.size() != static_cast<std::size_t>(hyper.rounds)) {
    throw StateError("enhancement trace has " + std::to_string(trace.rounds.size()) + " rounds, expected " +
                     std::to_string(hyper.rounds));
  }
  Graph<double> g;
  Var y = g.constant(image_to_tensor<double>(trace.y));
  std::vector<Var> x, s;
  for (const auto& r : trace.rounds) {
    if (r.x.empty() || r.s.empty()) throw StateError("enhancement trace has an empty round");
    x.push_back(g.constant(image_to_tensor<double>(r.x)));
    s.push_back(g.constant(image_to_tensor<double>(r.s)));
  }
  return g.value(enhancement_loss(g, y, x, s, hyper))[0];
}

double smoothness_weight(const float* a, const float* b, double sigma) {
  double d2 = 0.0;
  for (int o = 0; o < 3; ++o) {
    double d = 0.0;
    for (int i = 0; i < 3; ++i) d += kYuvFromRgb[o][i] * (static_cast<double>(a[i]) - b[i]);
    d2 += d * d;
  }
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

template EnhanceVars<float> enhance_graph(Scope<float>&, Var, const EnhanceHyper&);
template EnhanceVars<double> enhance_graph(Scope<double>&, Var, const EnhanceHyper&);
template Var enhancement_loss(Graph<float>&, Var, const std::vector<Var>&, const std::vector<Var>&,
                              const EnhanceHyper&);
template Var enhancement_loss(Graph<double>&, Var, const std::vector<Var>&, const std::vector<Var>&,
                              const EnhanceHyper&);

}  // namespace mer
