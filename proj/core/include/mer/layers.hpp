#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mer/graph.hpp"

namespace mer {

enum class LayerKind {
  Conv3x3,     // stride 1, pad 1
  Conv1x1,
  Down,        // conv3x3 stride 2
  Up,          // nearest upsample x2, then conv3x3
  Relu,
  LeakyRelu,   // slope 0.2
  Bounded,     // sigmoid to [0,1]
  Residual,    // x + conv_b(relu(conv_a(x)))
  ConcatSkip,  // concat(current, sequence input) along channels
  Attention,   // spatial self-attention with residual add
  MaxPool,     // 2x2 stride 2
};

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int in = 0;
  int out = 0;
  std::string name;  // parameter prefix, e.g. "netl.up0"
  bool spectral = false;
};

using Network = std::vector<LayerSpec>;

// Named parameter shapes a layer owns ("<name>.weight", "<name>.bias", ...).
std::vector<std::pair<std::string, Shape>> parameter_shapes(const LayerSpec& spec);
std::vector<std::pair<std::string, Shape>> parameter_shapes(const Network& net);

// Output NCHW shape for an input shape; throws ArgumentError on mismatch.
Shape output_shape(const LayerSpec& spec, const Shape& in);

// Kaiming-style fan-in init (normal, std sqrt(2/fan_in)); biases zero.
void init_layer(const LayerSpec& spec, Params& params, std::mt19937_64& rng);
void init_network(const Network& net, Params& params, std::mt19937_64& rng);

// Width of the attention query/key projection for a C-channel feature map.
inline int attention_key_width(int channels) { return std::max(1, channels / 8); }

// Binds parameters of a ParamMap into a graph on first use.
template <typename T>
class Scope {
 public:
  Scope(Graph<T>& g, const ParamMap<T>& params, bool trainable)
      : g_(&g), params_(&params), trainable_(trainable) {}

  Graph<T>& graph() { return *g_; }
  bool trainable() const { return trainable_; }

  Var param(const std::string& name);
  bool has(const std::string& name) const { return params_->count(name) != 0; }
  const std::map<std::string, Var>& bound() const { return bound_; }

  // Spectral-norm left vectors keyed by weight name; used for layers with spectral = true.
  void set_spectral(const std::map<std::string, std::vector<T>>* u) { spectral_u_ = u; }
  const std::vector<T>* spectral_u(const std::string& weight) const;

  // Receives the attention weight matrices of every Attention layer run.
  void set_attention_sink(std::vector<Tensor<T>>* sink) { attention_sink_ = sink; }
  std::vector<Tensor<T>>* attention_sink() const { return attention_sink_; }

  // Gradients of all bound parameters after backward().
  ParamMap<T> gradients();

 private:
  Graph<T>* g_;
  const ParamMap<T>* params_;
  bool trainable_;
  std::map<std::string, Var> bound_;
  const std::map<std::string, std::vector<T>>* spectral_u_ = nullptr;
  std::vector<Tensor<T>>* attention_sink_ = nullptr;
};

template <typename T>
Var conv_layer(Scope<T>& s, const std::string& name, Var x, int stride, int pad, bool spectral = false);

template <typename T>
Var apply_layer(Scope<T>& s, const LayerSpec& spec, Var x, Var sequence_input = Var{});

// Runs the layers in order. Channel mismatches name the layer index.
template <typename T>
Var forward_sequence(Scope<T>& s, const Network& net, Var x);

// Receptive-field radius in input pixels of a layer stack, tracked with
// jump/radius arithmetic. Upsampling adds half a jump of slack.
// Attention makes the field global (returns +inf).
double receptive_radius(const Network& net);

}  // namespace mer
