#include "mer/losses.hpp"

#include <cmath>
#include <random>
#include <type_traits>

#include "mer/checkpoint.hpp"

namespace mer {

namespace {

constexpr double kImagenetMean[3] = {0.485, 0.456, 0.406};
constexpr double kImagenetStd[3] = {0.229, 0.224, 0.225};

template <typename T>
double region_count(const Tensor<T>& mask, bool holes) {
  double n = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) n += (mask[i] >= T(0.5)) == holes ? 1.0 : 0.0;
  return n;
}

template <typename T>
Tensor<T> region_weights(const Tensor<T>& mask, bool holes) {
  Tensor<T> w(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) w[i] = (mask[i] >= T(0.5)) == holes ? T(1) : T(0);
  return w;
}

void check_features(const std::vector<Var>& a, const std::vector<Var>& b, const std::vector<Var>& c) {
  if (a.size() != b.size() || a.size() != c.size() || a.empty()) {
    throw ArgumentError("feature lists must be non-empty and equally long");
  }
}

Tensor<float> as_scores(const Tensor<float>& t) {
  Tensor<float> out = t;
  out.reshape({1, 1, 1, static_cast<int>(t.size())});
  return out;
}

}  // namespace

Network vgg_network(int width_divisor) {
  if (width_divisor < 1) throw ArgumentError("width divisor must be >= 1");
  const int a = std::max(1, 64 / width_divisor);
  const int b = std::max(1, 128 / width_divisor);
  const int c = std::max(1, 256 / width_divisor);
  auto conv = [](int idx, int in, int out) {
    return LayerSpec{LayerKind::Conv3x3, in, out, "vgg.features." + std::to_string(idx)};
  };
  auto relu = [](int ch) { return LayerSpec{LayerKind::Relu, ch, ch, ""}; };
  auto pool = [](int ch) { return LayerSpec{LayerKind::MaxPool, ch, ch, ""}; };
  return {conv(0, 3, a),  relu(a), conv(2, a, a),  relu(a), pool(a),
          conv(5, a, b),  relu(b), conv(7, b, b),  relu(b), pool(b),
          conv(10, b, c), relu(c), conv(12, c, c), relu(c), conv(14, c, c), relu(c), pool(c)};
}

FeatureExtractor FeatureExtractor::test_mode(std::uint64_t seed, int width_divisor) {
  FeatureExtractor fx;
  fx.net_ = vgg_network(width_divisor);
  std::mt19937_64 rng(seed);
  init_network(fx.net_, fx.weights_, rng);
  fx.weights_d_ = cast_params<double>(fx.weights_);
  fx.normalize_ = false;
  return fx;
}

FeatureExtractor FeatureExtractor::from_params(const Params& params, bool imagenet_normalize) {
  auto first = params.find("vgg.features.0.weight");
  if (first == params.end()) throw LoadError("missing tensor vgg.features.0.weight");
  const int a = first->second.dim(0);
  if (a < 1 || 64 % a != 0) throw LoadError("vgg.features.0.weight has unsupported width " + std::to_string(a));
  FeatureExtractor fx;
  fx.net_ = vgg_network(64 / a);
  std::vector<std::string> missing;
  for (const auto& [name, shape] : parameter_shapes(fx.net_)) {
    auto it = params.find(name);
    if (it == params.end()) {
      missing.push_back(name);
    } else if (it->second.shape() != shape) {
      throw LoadError("tensor " + name + " has shape " + shape_string(it->second.shape()) + ", expected " +
                      shape_string(shape));
    } else {
      fx.weights_.emplace(name, it->second);
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing tensors:";
    for (const auto& m : missing) msg += " " + m;
    throw LoadError(msg);
  }
  fx.weights_d_ = cast_params<double>(fx.weights_);
  fx.normalize_ = imagenet_normalize;
  return fx;
}

FeatureExtractor FeatureExtractor::load(const std::filesystem::path& path, bool imagenet_normalize) {
  return from_params(load_checkpoint(path), imagenet_normalize);
}

template <typename T>
std::vector<Var> FeatureExtractor::extract(Graph<T>& g, Var image) const {
  if (g.shape(image).size() != 4 || g.shape(image)[1] != 3) {
    throw ArgumentError("feature extractor needs [N,3,H,W], got " + shape_string(g.shape(image)));
  }
  const ParamMap<T>* weights;
  if constexpr (std::is_same_v<T, float>) {
    weights = &weights_;
  } else {
    weights = &weights_d_;
  }
  Scope<T> s(g, *weights, false);
  Var x = image;
  if (normalize_) {
    Tensor<T> w({3, 3, 1, 1});
    Tensor<T> b({3});
    for (int c = 0; c < 3; ++c) {
      w[static_cast<std::size_t>(c * 3 + c)] = static_cast<T>(1.0 / kImagenetStd[c]);
      b[static_cast<std::size_t>(c)] = static_cast<T>(-kImagenetMean[c] / kImagenetStd[c]);
    }
    x = conv2d(g, x, g.constant(std::move(w)), g.constant(std::move(b)), 1, 0);
  }
  std::vector<Var> taps;
  for (std::size_t i = 0; i < net_.size(); ++i) {
    x = apply_layer(s, net_[i], x);
    for (int end : kTapEnds) {
      if (static_cast<std::size_t>(end) == i + 1) taps.push_back(x);
    }
  }
  return taps;
}

std::vector<Tensor<float>> FeatureExtractor::extract(const Image& img) const {
  Graph<float> g;
  std::vector<Tensor<float>> out;
  for (Var v : extract(g, g.constant(image_to_tensor<float>(img)))) out.push_back(g.value(v));
  return out;
}

template <typename T>
Var recon_loss(Graph<T>& g, Var out, Var gt, const Tensor<T>& mask, double hole_weight) {
  const Shape& s = g.shape(out);
  if (s != g.shape(gt)) throw ArgumentError("recon_loss: shape mismatch");
  if (mask.shape() != Shape{s[0], 1, s[2], s[3]}) throw ArgumentError("recon_loss: mask shape mismatch");
  Var per_pixel = scale(g, sum_channels(g, abs(g, sub(g, out, gt))), 1.0 / s[1]);
  const double n_valid = region_count(mask, false);
  const double n_hole = region_count(mask, true);
  Var total = g.constant(Tensor<T>({1}));
  if (n_valid > 0) {
    Var valid = sum(g, mul(g, per_pixel, g.constant(region_weights(mask, false))));
    total = add(g, total, scale(g, valid, 1.0 / n_valid));
  }
  if (n_hole > 0) {
    Var hole = sum(g, mul(g, per_pixel, g.constant(region_weights(mask, true))));
    total = add(g, total, scale(g, hole, hole_weight / n_hole));
  }
  return total;
}

template <typename T>
Var gen_gan_loss(Graph<T>& g, Var scores, double weight) {
  return scale(g, mean(g, square(g, add_scalar(g, scores, -1.0))), weight);
}

template <typename T>
Var disc_loss(Graph<T>& g, Var real_scores, Var fake_scores) {
  Var r = mean(g, square(g, add_scalar(g, real_scores, -1.0)));
  Var f = mean(g, square(g, fake_scores));
  return scale(g, add(g, r, f), 0.5);
}

template <typename T>
Var tv_loss(Graph<T>& g, Var img) {
  const Shape& s = g.shape(img);
  const double n = static_cast<double>(s[0]) * s[1] * s[2] * s[3];
  Var dx = sum(g, abs(g, shift_diff(g, img, 3)));
  Var dy = sum(g, abs(g, shift_diff(g, img, 2)));
  return scale(g, add(g, dx, dy), 1.0 / n);
}

template <typename T>
Var perceptual_loss(Graph<T>& g, const std::vector<Var>& f_out, const std::vector<Var>& f_mer,
                    const std::vector<Var>& f_gt) {
  check_features(f_out, f_mer, f_gt);
  Var total;
  for (std::size_t i = 0; i < f_out.size(); ++i) {
    Var a = mean(g, abs(g, sub(g, f_out[i], f_gt[i])));
    Var b = mean(g, abs(g, sub(g, f_mer[i], f_gt[i])));
    Var t = add(g, a, b);
    total = total.valid() ? add(g, total, t) : t;
  }
  return total;
}

template <typename T>
Var style_loss(Graph<T>& g, const std::vector<Var>& f_out, const std::vector<Var>& f_mer,
               const std::vector<Var>& f_gt) {
  check_features(f_out, f_mer, f_gt);
  Var total;
  for (std::size_t i = 0; i < f_out.size(); ++i) {
    Var gg = gram(g, f_gt[i]);
    Var a = mean(g, abs(g, sub(g, gram(g, f_out[i]), gg)));
    Var b = mean(g, abs(g, sub(g, gram(g, f_mer[i]), gg)));
    Var t = add(g, a, b);
    total = total.valid() ? add(g, total, t) : t;
  }
  return total;
}

double recon_loss(const Image& out, const Image& gt, const Mask& mask, double hole_weight) {
  if (!out.same_shape(gt) || mask.height() != out.height() || mask.width() != out.width()) {
    throw ArgumentError("recon_loss: shape mismatch");
  }
  Graph<double> g;
  Var o = g.constant(image_to_tensor<double>(out));
  Var t = g.constant(image_to_tensor<double>(gt));
  return g.value(recon_loss(g, o, t, mask_to_tensor<double>(mask), hole_weight))[0];
}

double gen_gan_loss(const Tensor<float>& scores, double weight) {
  Graph<double> g;
  return g.value(gen_gan_loss(g, g.constant(as_scores(scores).cast<double>()), weight))[0];
}

double disc_loss(const Tensor<float>& real_scores, const Tensor<float>& fake_scores) {
  Graph<double> g;
  Var r = g.constant(as_scores(real_scores).cast<double>());
  Var f = g.constant(as_scores(fake_scores).cast<double>());
  return g.value(disc_loss(g, r, f))[0];
}

double tv_loss(const Image& img) {
  Graph<double> g;
  return g.value(tv_loss(g, g.constant(image_to_tensor<double>(img))))[0];
}

Tensor<double> gram(const Tensor<double>& feature) {
  Tensor<double> f = feature;
  if (f.rank() == 3) f.reshape({1, f.dim(0), f.dim(1), f.dim(2)});
  if (f.rank() != 4 || f.dim(0) != 1) throw ArgumentError("gram expects [C,H,W] or [1,C,H,W]");
  Graph<double> g;
  Tensor<double> out = g.value(gram(g, g.constant(std::move(f))));
  out.reshape({out.dim(1), out.dim(2)});
  return out;
}

namespace {

template <typename F>
double feature_loss(const FeatureExtractor& fx, const Image& out, const Image& mer, const Image& gt, F f) {
  if (!out.same_shape(mer) || !out.same_shape(gt)) throw ArgumentError("feature loss: shape mismatch");
  Graph<double> g;
  auto fo = fx.extract(g, g.constant(image_to_tensor<double>(out)));
  auto fm = fx.extract(g, g.constant(image_to_tensor<double>(mer)));
  auto fg = fx.extract(g, g.constant(image_to_tensor<double>(gt)));
  return g.value(f(g, fo, fm, fg))[0];
}

}  // namespace

double perceptual_loss(const FeatureExtractor& fx, const Image& out, const Image& mer, const Image& gt) {
  return feature_loss(fx, out, mer, gt, [](Graph<double>& g, auto& a, auto& b, auto& c) {
    return perceptual_loss(g, a, b, c);
  });
}

double style_loss(const FeatureExtractor& fx, const Image& out, const Image& mer, const Image& gt) {
  return feature_loss(fx, out, mer, gt, [](Graph<double>& g, auto& a, auto& b, auto& c) {
    return style_loss(g, a, b, c);
  });
}

double stage_loss(double recon, double tv, double per, double sty, const LossWeights& w) {
  return recon + w.tv * tv + w.per * per + w.sty * sty;
}

double total_restoration_loss(const RestorationParts& p) {
  return p.recon_c + p.gan_c + p.disc + p.local + p.global;
}

double mer_loss(double restoration, double enhancement, int lambda_r, int lambda_e) {
  const bool valid = (lambda_r == 1 && lambda_e == 0) || (lambda_r == 0 && lambda_e == 1);
  if (!valid) {
    throw ArgumentError("phase switches must be (1,0) or (0,1), got (" + std::to_string(lambda_r) + "," +
                        std::to_string(lambda_e) + ")");
  }
  return lambda_r * restoration + lambda_e * enhancement;
}

#define MER_INSTANTIATE_LOSSES(T)                                                                  \
  template std::vector<Var> FeatureExtractor::extract(Graph<T>&, Var) const;                        \
  template Var recon_loss(Graph<T>&, Var, Var, const Tensor<T>&, double);                          \
  template Var gen_gan_loss(Graph<T>&, Var, double);                                               \
  template Var disc_loss(Graph<T>&, Var, Var);                                                     \
  template Var tv_loss(Graph<T>&, Var);                                                            \
  template Var perceptual_loss(Graph<T>&, const std::vector<Var>&, const std::vector<Var>&,        \
                               const std::vector<Var>&);                                           \
  template Var style_loss(Graph<T>&, const std::vector<Var>&, const std::vector<Var>&,             \
                          const std::vector<Var>&);

MER_INSTANTIATE_LOSSES(float)
MER_INSTANTIATE_LOSSES(double)

}  // namespace mer
