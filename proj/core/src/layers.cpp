#include "mer/layers.hpp"

#include <cmath>
#include <limits>

namespace mer {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::Conv1x1: return "conv1x1";
    case LayerKind::Down: return "down";
    case LayerKind::Up: return "up";
    case LayerKind::Relu: return "relu";
    case LayerKind::LeakyRelu: return "leaky_relu";
    case LayerKind::Bounded: return "bounded";
    case LayerKind::Residual: return "residual";
    case LayerKind::ConcatSkip: return "concat_skip";
    case LayerKind::Attention: return "attention";
    case LayerKind::MaxPool: return "max_pool";
  }
  return "?";
}

namespace {

void conv_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& name, int in, int o, int k) {
  out.emplace_back(name + ".weight", Shape{o, in, k, k});
  out.emplace_back(name + ".bias", Shape{o});
}

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_shapes(const LayerSpec& spec) {
  std::vector<std::pair<std::string, Shape>> out;
  switch (spec.kind) {
    case LayerKind::Conv3x3:
    case LayerKind::Down:
    case LayerKind::Up:
      conv_shapes(out, spec.name, spec.in, spec.out, 3);
      break;
    case LayerKind::Conv1x1:
      conv_shapes(out, spec.name, spec.in, spec.out, 1);
      break;
    case LayerKind::Residual:
      conv_shapes(out, spec.name + ".a", spec.in, spec.in, 3);
      conv_shapes(out, spec.name + ".b", spec.in, spec.in, 3);
      break;
    case LayerKind::Attention: {
      const int d = attention_key_width(spec.in);
      conv_shapes(out, spec.name + ".q", spec.in, d, 1);
      conv_shapes(out, spec.name + ".k", spec.in, d, 1);
      conv_shapes(out, spec.name + ".v", spec.in, spec.in, 1);
      break;
    }
    default:
      break;
  }
  return out;
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const Network& net) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& spec : net) {
    auto part = parameter_shapes(spec);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

Shape output_shape(const LayerSpec& spec, const Shape& in) {
  if (in.size() != 4) throw ArgumentError("expected NCHW input, got " + shape_string(in));
  const bool channel_free = spec.kind == LayerKind::Relu || spec.kind == LayerKind::LeakyRelu ||
                            spec.kind == LayerKind::Bounded || spec.kind == LayerKind::MaxPool;
  if (!channel_free && spec.kind != LayerKind::ConcatSkip && in[1] != spec.in) {
    throw ArgumentError(std::string(layer_kind_name(spec.kind)) + " '" + spec.name + "' expects " +
                        std::to_string(spec.in) + " channels, got " + std::to_string(in[1]));
  }
  Shape out = in;
  switch (spec.kind) {
    case LayerKind::Conv3x3:
    case LayerKind::Conv1x1:
      out[1] = spec.out;
      break;
    case LayerKind::Down:
      out[1] = spec.out;
      out[2] = (in[2] - 1) / 2 + 1;
      out[3] = (in[3] - 1) / 2 + 1;
      break;
    case LayerKind::Up:
      out[1] = spec.out;
      out[2] = in[2] * 2;
      out[3] = in[3] * 2;
      break;
    case LayerKind::MaxPool:
      out[2] = in[2] / 2;
      out[3] = in[3] / 2;
      break;
    case LayerKind::ConcatSkip:
      out[1] = spec.out;
      break;
    default:
      break;
  }
  return out;
}

void init_layer(const LayerSpec& spec, Params& params, std::mt19937_64& rng) {
  for (const auto& [name, shape] : parameter_shapes(spec)) {
    Tensor<float> t(shape);
    if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(dist(rng));
    }
    params[name] = std::move(t);
  }
}

void init_network(const Network& net, Params& params, std::mt19937_64& rng) {
  for (const auto& spec : net) init_layer(spec, params, rng);
}

template <typename T>
Var Scope<T>::param(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  auto p = params_->find(name);
  if (p == params_->end()) throw ArgumentError("missing parameter '" + name + "'");
  Var v = trainable_ ? g_->parameter(p->second) : g_->constant(p->second);
  bound_.emplace(name, v);
  return v;
}

template <typename T>
const std::vector<T>* Scope<T>::spectral_u(const std::string& weight) const {
  if (!spectral_u_) return nullptr;
  auto it = spectral_u_->find(weight);
  return it == spectral_u_->end() ? nullptr : &it->second;
}

template <typename T>
ParamMap<T> Scope<T>::gradients() {
  ParamMap<T> out;
  for (const auto& [name, v] : bound_) {
    if (g_->requires_grad(v)) out.emplace(name, g_->grad(v));
  }
  return out;
}

template <typename T>
Var conv_layer(Scope<T>& s, const std::string& name, Var x, int stride, int pad, bool spectral) {
  Graph<T>& g = s.graph();
  Var w = s.param(name + ".weight");
  if (spectral) {
    const std::vector<T>* u = s.spectral_u(name + ".weight");
    if (!u) throw StateError("no power-iteration state for '" + name + ".weight'");
    w = spectral_weight(g, w, *u);
  }
  Var b = s.has(name + ".bias") ? s.param(name + ".bias") : Var{};
  return conv2d(g, x, w, b, stride, pad);
}

template <typename T>
Var apply_layer(Scope<T>& s, const LayerSpec& spec, Var x, Var sequence_input) {
  Graph<T>& g = s.graph();
  output_shape(spec, g.shape(x));  // validates channels
  switch (spec.kind) {
    case LayerKind::Conv3x3:
      return conv_layer(s, spec.name, x, 1, 1, spec.spectral);
    case LayerKind::Conv1x1:
      return conv_layer(s, spec.name, x, 1, 0, spec.spectral);
    case LayerKind::Down:
      return conv_layer(s, spec.name, x, 2, 1, spec.spectral);
    case LayerKind::Up:
      return conv_layer(s, spec.name, upsample2(g, x), 1, 1, spec.spectral);
    case LayerKind::Relu:
      return relu(g, x);
    case LayerKind::LeakyRelu:
      return leaky_relu(g, x, 0.2);
    case LayerKind::Bounded:
      return sigmoid(g, x);
    case LayerKind::MaxPool:
      return max_pool2(g, x);
    case LayerKind::Residual: {
      Var h = relu(g, conv_layer(s, spec.name + ".a", x, 1, 1, spec.spectral));
      return add(g, x, conv_layer(s, spec.name + ".b", h, 1, 1, spec.spectral));
    }
    case LayerKind::ConcatSkip: {
      if (!sequence_input.valid()) throw ArgumentError("concat_skip '" + spec.name + "' has no skip input");
      Var out = concat_channels(g, std::vector<Var>{x, sequence_input});
      if (g.shape(out)[1] != spec.out) {
        throw ArgumentError("concat_skip '" + spec.name + "' expects " + std::to_string(spec.out) +
                            " output channels, got " + std::to_string(g.shape(out)[1]));
      }
      return out;
    }
    case LayerKind::Attention: {
      Var q = conv_layer(s, spec.name + ".q", x, 1, 0, spec.spectral);
      Var k = conv_layer(s, spec.name + ".k", x, 1, 0, spec.spectral);
      Var v = conv_layer(s, spec.name + ".v", x, 1, 0, spec.spectral);
      Tensor<T> weights;
      Var a = attend(g, q, k, v, s.attention_sink() ? &weights : nullptr);
      if (s.attention_sink()) s.attention_sink()->push_back(std::move(weights));
      return add(g, x, a);
    }
  }
  throw ArgumentError("unknown layer kind");
}

template <typename T>
Var forward_sequence(Scope<T>& s, const Network& net, Var x) {
  const Var input = x;
  for (std::size_t i = 0; i < net.size(); ++i) {
    try {
      x = apply_layer(s, net[i], x, input);
    } catch (const ArgumentError& e) {
      throw ArgumentError("layer " + std::to_string(i) + ": " + e.what());
    }
  }
  return x;
}

double receptive_radius(const Network& net) {
  double jump = 1.0, radius = 0.0;
  for (const auto& spec : net) {
    switch (spec.kind) {
      case LayerKind::Conv3x3:
        radius += jump;
        break;
      case LayerKind::Down:
        radius += jump;
        jump *= 2.0;
        break;
      case LayerKind::MaxPool:
        radius += 0.5 * jump;
        jump *= 2.0;
        break;
      case LayerKind::Up:
        jump *= 0.5;
        radius += jump;  // alignment slack of the nearest upsample
        radius += jump;  // the conv3x3
        break;
      case LayerKind::Residual:
        radius += 2.0 * jump;
        break;
      case LayerKind::Attention:
        return std::numeric_limits<double>::infinity();
      default:
        break;
    }
  }
  return radius;
}

#define MER_INSTANTIATE_LAYERS(T)                                                  \
  template class Scope<T>;                                                         \
  template Var conv_layer(Scope<T>&, const std::string&, Var, int, int, bool);      \
  template Var apply_layer(Scope<T>&, const LayerSpec&, Var, Var);                 \
  template Var forward_sequence(Scope<T>&, const Network&, Var);

MER_INSTANTIATE_LAYERS(float)
MER_INSTANTIATE_LAYERS(double)

}  // namespace mer
