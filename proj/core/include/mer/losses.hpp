#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mer/image.hpp"
#include "mer/layers.hpp"

namespace mer {

struct LossWeights {
  double hole = 6.0;
  double gan_gen = 0.1;
  double tv = 0.1;
  double per = 0.05;
  double sty = 120.0;
};

// VGG-16 layout feature stack, sequence indices 0..16 (7 convs, relus and 3
// max-pools). Taps are the outputs of slices [0,5), [5,10) and [10,17).
// Weights: vgg.features.{idx}.weight / .bias. Channel widths are the VGG
// widths (64,128,256) divided by `width_divisor`.
class FeatureExtractor {
 public:
  static constexpr int kTapEnds[3] = {5, 10, 17};

  // Fixed-seed Kaiming weights, zero biases, no input normalization.
  static FeatureExtractor test_mode(std::uint64_t seed = 17, int width_divisor = 8);
  // Checkpoint-format file with vgg.* tensors; widths come from the shapes.
  static FeatureExtractor from_params(const Params& params, bool imagenet_normalize = true);
  static FeatureExtractor load(const std::filesystem::path& path, bool imagenet_normalize = true);

  const Params& weights() const { return weights_; }
  const Network& network() const { return net_; }
  bool normalizes_input() const { return normalize_; }

  template <typename T>
  std::vector<Var> extract(Graph<T>& g, Var image) const;
  // Frozen: parameters are always bound as constants.
  std::vector<Tensor<float>> extract(const Image& img) const;

 private:
  Params weights_;
  ParamMap<double> weights_d_;
  Network net_;
  bool normalize_ = false;
};

Network vgg_network(int width_divisor);

// ---- graph-level losses; images [N,C,H,W], masks [N,1,H,W] with 1 = hole ----

template <typename T>
Var recon_loss(Graph<T>& g, Var out, Var gt, const Tensor<T>& mask, double hole_weight = 6.0);
template <typename T>
Var gen_gan_loss(Graph<T>& g, Var scores, double weight = 0.1);
template <typename T>
Var disc_loss(Graph<T>& g, Var real_scores, Var fake_scores);
template <typename T>
Var tv_loss(Graph<T>& g, Var img);
// Features of gt are passed precomputed (they never need gradients).
template <typename T>
Var perceptual_loss(Graph<T>& g, const std::vector<Var>& f_out, const std::vector<Var>& f_mer,
                    const std::vector<Var>& f_gt);
template <typename T>
Var style_loss(Graph<T>& g, const std::vector<Var>& f_out, const std::vector<Var>& f_mer,
               const std::vector<Var>& f_gt);

// ---- image-level (double precision) ----

double recon_loss(const Image& out, const Image& gt, const Mask& mask, double hole_weight = 6.0);
double gen_gan_loss(const Tensor<float>& scores, double weight = 0.1);
double disc_loss(const Tensor<float>& real_scores, const Tensor<float>& fake_scores);
double tv_loss(const Image& img);
Tensor<double> gram(const Tensor<double>& feature);  // [C,H,W] or [1,C,H,W] -> [C,C]
double perceptual_loss(const FeatureExtractor& fx, const Image& out, const Image& mer, const Image& gt);
double style_loss(const FeatureExtractor& fx, const Image& out, const Image& mer, const Image& gt);

double stage_loss(double recon, double tv, double per, double sty, const LossWeights& w = {});

struct RestorationParts {
  double recon_c = 0.0;  // L_r^C
  double gan_c = 0.0;    // L_G^C
  double disc = 0.0;     // L_D
  double local = 0.0;    // L_L
  double global = 0.0;   // L_G
};
double total_restoration_loss(const RestorationParts& parts);

// lambda_R * L_R + lambda_E * L_E; exactly one switch must be 1.
double mer_loss(double restoration, double enhancement, int lambda_r, int lambda_e);

}  // namespace mer
