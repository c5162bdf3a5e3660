#include "mer/inpaint.hpp"

#include <cmath>

namespace mer {

namespace {

template <typename T>
Tensor<T> batch_mask(const Mask& m) {
  return mask_to_tensor<T>(m, 1);
}

void require_tile_multiple(const Shape& s, const char* what) {
  if (s.size() != 4 || s[2] < kInpaintTile || s[3] < kInpaintTile || s[2] % kInpaintTile || s[3] % kInpaintTile) {
    throw ArgumentError(std::string(what) + ": spatial dims must be multiples of 256, got " + shape_string(s));
  }
}

template <typename T>
Var unet(Scope<T>& s, const std::string& prefix, Var input, int width, bool attention) {
  Graph<T>& g = s.graph();
  std::vector<Var> enc(kUNetLevels + 1);
  enc[0] = input;
  for (int l = 1; l <= kUNetLevels; ++l) {
    enc[l] = leaky_relu(g, conv_layer(s, prefix + ".enc" + std::to_string(l), enc[l - 1], 2, 1), 0.2);
  }
  std::vector<Var> skip = enc;
  if (attention) {
    for (int l : attention_levels()) {
      const int c = encoder_channels(width, l);
      skip[l] = apply_layer(s, LayerSpec{LayerKind::Attention, c, c, prefix + ".att" + std::to_string(l)}, enc[l]);
    }
  }
  Var d = enc[kUNetLevels];
  for (int l = kUNetLevels - 1; l >= 0; --l) {
    Var cat = concat_channels(g, std::vector<Var>{upsample2(g, d), skip[l]});
    d = conv_layer(s, prefix + ".dec" + std::to_string(l), cat, 1, 1);
    if (l > 0) d = relu(g, d);
  }
  return sigmoid(g, d);
}

}  // namespace

void InpaintConfig::validate() const {
  if (width < 1) throw ArgumentError("inpaint width must be positive");
  if (netl_scale != 1 && netl_scale != 2) throw ArgumentError("netl_scale must be 1 or 2");
  if (disc_width < 0) throw ArgumentError("disc_width must be >= 0");
}

int encoder_channels(int width, int level) {
  if (level < 1 || level > kUNetLevels) throw ArgumentError("encoder level out of range");
  return width * std::min(1 << (level - 1), 8);
}

std::vector<int> attention_levels() { return {2, 3, 4}; }

std::vector<std::pair<std::string, Shape>> unet_parameter_shapes(const std::string& prefix, int in_channels,
                                                                 int width, bool attention) {
  std::vector<std::pair<std::string, Shape>> out;
  auto conv = [&](const std::string& name, int ci, int co, int k) {
    out.emplace_back(prefix + "." + name + ".weight", Shape{co, ci, k, k});
    out.emplace_back(prefix + "." + name + ".bias", Shape{co});
  };
  int prev = in_channels;
  for (int l = 1; l <= kUNetLevels; ++l) {
    conv("enc" + std::to_string(l), prev, encoder_channels(width, l), 3);
    prev = encoder_channels(width, l);
  }
  for (int l = kUNetLevels - 1; l >= 0; --l) {
    const int up = encoder_channels(width, l + 1);
    const int sk = l == 0 ? in_channels : encoder_channels(width, l);
    conv("dec" + std::to_string(l), up + sk, l == 0 ? 3 : encoder_channels(width, l), 3);
  }
  if (attention) {
    for (int l : attention_levels()) {
      const int c = encoder_channels(width, l);
      const int d = attention_key_width(c);
      conv("att" + std::to_string(l) + ".q", c, d, 1);
      conv("att" + std::to_string(l) + ".k", c, d, 1);
      conv("att" + std::to_string(l) + ".v", c, c, 1);
    }
  }
  return out;
}

Network netl_network(const InpaintConfig& cfg) {
  const int w = cfg.width;
  const LayerKind up = cfg.netl_scale == 2 ? LayerKind::Up : LayerKind::Conv3x3;
  const LayerKind down = cfg.netl_scale == 2 ? LayerKind::Down : LayerKind::Conv3x3;
  Network net = {
      {LayerKind::Conv3x3, 3, w, "netl.in"}, {LayerKind::Relu, w, w, ""},
      {up, w, w, "netl.up0"},                {LayerKind::Relu, w, w, ""},
      {up, w, w, "netl.up1"},                {LayerKind::Relu, w, w, ""},
  };
  for (int i = 0; i < 4; ++i) net.push_back({LayerKind::Residual, w, w, "netl.res" + std::to_string(i)});
  net.push_back({down, w, w, "netl.down0"});
  net.push_back({LayerKind::Relu, w, w, ""});
  net.push_back({down, w, w, "netl.down1"});
  net.push_back({LayerKind::Relu, w, w, ""});
  net.push_back({LayerKind::Conv3x3, w, 3, "netl.out"});
  net.push_back({LayerKind::Bounded, 3, 3, ""});
  return net;
}

Network disc_network(const InpaintConfig& cfg) {
  const int w = cfg.discriminator_width();
  return {
      {LayerKind::Down, 3, w, "disc.l0", true},          {LayerKind::LeakyRelu, w, w, ""},
      {LayerKind::Down, w, 2 * w, "disc.l1", true},      {LayerKind::LeakyRelu, 2 * w, 2 * w, ""},
      {LayerKind::Down, 2 * w, 4 * w, "disc.l2", true},  {LayerKind::LeakyRelu, 4 * w, 4 * w, ""},
      {LayerKind::Conv3x3, 4 * w, 1, "disc.head", true},
  };
}

Network netc_deepest_path(const InpaintConfig& cfg) {
  Network net;
  int c = 4;
  for (int l = 1; l <= kUNetLevels; ++l) {
    net.push_back({LayerKind::Down, c, encoder_channels(cfg.width, l), "enc"});
    c = encoder_channels(cfg.width, l);
  }
  for (int l = kUNetLevels - 1; l >= 0; --l) net.push_back({LayerKind::Up, c, c, "dec"});
  return net;
}

void init_inpaint(Params& params, const InpaintConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto init_shapes = [&](const std::vector<std::pair<std::string, Shape>>& shapes) {
    for (const auto& [name, shape] : shapes) {
      Tensor<float> t(shape);
      if (shape.size() == 4) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (double(shape[1]) * shape[2] * shape[3])));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(dist(rng));
      }
      params[name] = std::move(t);
    }
  };
  init_shapes(unet_parameter_shapes("netc", 4, cfg.width, false));
  init_network(netl_network(cfg), params, rng);
  init_shapes(unet_parameter_shapes("netg", 3, cfg.width, true));
  init_network(disc_network(cfg), params, rng);
  params["meta.netl.scale"] = Tensor<float>({1}, static_cast<float>(cfg.netl_scale));
}

InpaintConfig infer_inpaint_config(const Params& params) {
  auto need = [&](const std::string& name) -> const Tensor<float>& {
    auto it = params.find(name);
    if (it == params.end()) throw LoadError("missing tensor " + name);
    return it->second;
  };
  InpaintConfig cfg;
  cfg.width = need("netc.enc1.weight").dim(0);
  cfg.disc_width = need("disc.l0.weight").dim(0);
  auto scale = params.find("meta.netl.scale");
  cfg.netl_scale = scale == params.end() ? 2 : static_cast<int>(std::lround(scale->second[0]));
  cfg.validate();
  return cfg;
}

SpectralStates make_spectral_states(const InpaintConfig& cfg, std::uint64_t seed) {
  SpectralStates states;
  for (const auto& spec : disc_network(cfg)) {
    if (!spec.spectral) continue;
    states.emplace(spec.name + ".weight", make_power_state(spec.out, seed++));
  }
  return states;
}

template <typename T>
std::map<std::string, std::vector<T>> spectral_vectors(const SpectralStates& states) {
  std::map<std::string, std::vector<T>> out;
  for (const auto& [name, st] : states) out.emplace(name, std::vector<T>(st.u.begin(), st.u.end()));
  return out;
}

void update_spectral_states(const Params& params, SpectralStates& states, int iterations) {
  for (auto& [name, st] : states) {
    auto it = params.find(name);
    if (it == params.end()) throw ArgumentError("missing discriminator weight '" + name + "'");
    power_iterate(it->second, st, iterations);
  }
}

template <typename T>
Var merge(Graph<T>& g, Var in, Var out, const Tensor<T>& mask) {
  const Shape& s = g.shape(in);
  if (s != g.shape(out)) throw ArgumentError("merge: shape mismatch " + shape_string(s) + " vs " + shape_string(g.shape(out)));
  if (s.size() != 4 || mask.rank() != 4 || mask.dim(0) != s[0] || mask.dim(1) != 1 || mask.dim(2) != s[2] ||
      mask.dim(3) != s[3]) {
    throw ArgumentError("merge: mask " + shape_string(mask.shape()) + " does not fit " + shape_string(s));
  }
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  const int n = s[0], c = s[1];
  std::vector<std::uint8_t> sel(static_cast<std::size_t>(n) * c * plane);
  Tensor<T> value(s);
  const Tensor<T>& a = g.value(in);
  const Tensor<T>& b = g.value(out);
  for (int bi = 0; bi < n; ++bi)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = (static_cast<std::size_t>(bi) * c + ch) * plane + p;
        const bool hole = mask[static_cast<std::size_t>(bi) * plane + p] >= T(0.5);
        sel[i] = hole;
        value[i] = hole ? b[i] : a[i];
      }
  return g.record(std::move(value), {in, out}, [in, out, sel = std::move(sel)](Graph<T>& gr, const Tensor<T>& og) {
    const bool gi = gr.requires_grad(in), go = gr.requires_grad(out);
    for (std::size_t i = 0; i < og.size(); ++i) {
      if (sel[i]) {
        if (go) gr.grad_buffer(out)[i] += og[i];
      } else if (gi) {
        gr.grad_buffer(in)[i] += og[i];
      }
    }
  });
}

template <typename T>
Var netc_forward(Scope<T>& s, Var image, const Tensor<T>& mask, const InpaintConfig& cfg) {
  Graph<T>& g = s.graph();
  const Shape& is = g.shape(image);
  require_tile_multiple(is, "coarse network");
  if (is[1] != 3) throw ArgumentError("coarse network needs 3-channel images");
  if (mask.shape() != Shape{is[0], 1, is[2], is[3]}) {
    throw ArgumentError("coarse network: mask " + shape_string(mask.shape()) + " does not fit " + shape_string(is));
  }
  Tensor<T> keep(is);
  const std::size_t plane = static_cast<std::size_t>(is[2]) * is[3];
  for (int b = 0; b < is[0]; ++b)
    for (int c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        keep[(static_cast<std::size_t>(b) * 3 + c) * plane + p] = mask[b * plane + p] >= T(0.5) ? T(0) : T(1);
  Var masked = mul(g, image, g.constant(std::move(keep)));
  Var input = concat_channels(g, std::vector<Var>{masked, g.constant(mask)});
  return unet(s, "netc", input, cfg.width, false);
}

template <typename T>
Var netl_forward(Scope<T>& s, Var image, const InpaintConfig& cfg) {
  return forward_sequence(s, netl_network(cfg), image);
}

template <typename T>
Var netg_forward(Scope<T>& s, Var image, const InpaintConfig& cfg) {
  require_tile_multiple(s.graph().shape(image), "global network");
  return unet(s, "netg", image, cfg.width, true);
}

template <typename T>
Var netg_forward_without_attention(Scope<T>& s, Var image, const InpaintConfig& cfg) {
  require_tile_multiple(s.graph().shape(image), "global network");
  return unet(s, "netg", image, cfg.width, false);
}

template <typename T>
Var disc_forward(Scope<T>& s, Var image, const InpaintConfig& cfg) {
  return forward_sequence(s, disc_network(cfg), image);
}

Image merge_with_mask(const Image& in, const Image& out, const Mask& mask) {
  if (!in.same_shape(out) || in.height() != mask.height() || in.width() != mask.width()) {
    throw ArgumentError("merge_with_mask: shape mismatch");
  }
  Image r = in;
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x)
      if (mask.at(y, x))
        for (int c = 0; c < in.channels(); ++c) r.at(y, x, c) = out.at(y, x, c);
  return r;
}

Image coarse_inpaint(const Params& params, const Image& in, const Mask& mask) {
  if (in.height() != mask.height() || in.width() != mask.width()) throw ArgumentError("coarse_inpaint: mask size mismatch");
  const InpaintConfig cfg = infer_inpaint_config(params);
  Graph<float> g;
  Scope<float> s(g, params, false);
  return tensor_to_image(g.value(netc_forward(s, g.constant(image_to_tensor<float>(in)), batch_mask<float>(mask), cfg)));
}

Image local_refine(const Params& params, const Image& merged) {
  const InpaintConfig cfg = infer_inpaint_config(params);
  Graph<float> g;
  Scope<float> s(g, params, false);
  return tensor_to_image(g.value(netl_forward(s, g.constant(image_to_tensor<float>(merged)), cfg)));
}

Image global_refine(const Params& params, const Image& merged, std::vector<Tensor<float>>* attention) {
  const InpaintConfig cfg = infer_inpaint_config(params);
  Graph<float> g;
  Scope<float> s(g, params, false);
  s.set_attention_sink(attention);
  return tensor_to_image(g.value(netg_forward(s, g.constant(image_to_tensor<float>(merged)), cfg)));
}

StageImages inpaint_stages(const Params& params, const Image& in, const Mask& mask) {
  StageImages st;
  st.coarse_raw = coarse_inpaint(params, in, mask);
  st.coarse = merge_with_mask(in, st.coarse_raw, mask);
  st.local_raw = local_refine(params, st.coarse);
  st.local = merge_with_mask(in, st.local_raw, mask);
  st.global_raw = global_refine(params, st.local);
  st.global = merge_with_mask(in, st.global_raw, mask);
  return st;
}

Tensor<float> discriminate(const Params& params, SpectralStates& states, const Image& img, int iterations) {
  if (img.height() != kInpaintTile || img.width() != kInpaintTile || img.channels() != 3) {
    throw ArgumentError("discriminator needs a 256x256x3 image");
  }
  const InpaintConfig cfg = infer_inpaint_config(params);
  update_spectral_states(params, states, iterations);
  const auto u = spectral_vectors<float>(states);
  Graph<float> g;
  Scope<float> s(g, params, false);
  s.set_spectral(&u);
  Tensor<float> out = g.value(disc_forward(s, g.constant(image_to_tensor<float>(img)), cfg));
  out.reshape({out.dim(2), out.dim(3)});
  return out;
}

#define MER_INSTANTIATE_INPAINT(T)                                                         \
  template std::map<std::string, std::vector<T>> spectral_vectors<T>(const SpectralStates&); \
  template Var merge(Graph<T>&, Var, Var, const Tensor<T>&);                               \
  template Var netc_forward(Scope<T>&, Var, const Tensor<T>&, const InpaintConfig&);        \
  template Var netl_forward(Scope<T>&, Var, const InpaintConfig&);                         \
  template Var netg_forward(Scope<T>&, Var, const InpaintConfig&);                         \
  template Var netg_forward_without_attention(Scope<T>&, Var, const InpaintConfig&);       \
  template Var disc_forward(Scope<T>&, Var, const InpaintConfig&);

MER_INSTANTIATE_INPAINT(float)
MER_INSTANTIATE_INPAINT(double)

}  // namespace mer
