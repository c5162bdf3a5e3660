#pragma once

// Naive reference implementations used as test oracles. They share no code
// with the library beyond the Image / Mask containers.

#include <cstdint>
#include <random>
#include <vector>

#include "mer/image.hpp"
#include "mer/tensor.hpp"

namespace oracle {

using mer::Image;
using mer::Mask;

// C x H x W block of doubles.
struct Feat {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
  double& at(int k, int y, int x) { return v[(static_cast<std::size_t>(k) * h + y) * w + x]; }
  double at(int k, int y, int x) const { return v[(static_cast<std::size_t>(k) * h + y) * w + x]; }
};

Feat from_image(const Image& img);

// Direct 2-D convolution (cross-correlation), zero padding.
Feat conv2d(const Feat& x, const mer::Tensor<float>& w, const mer::Tensor<float>* b, int stride, int pad);
Feat relu(Feat x);
Feat max_pool2(const Feat& x);

// BT.601 full-range YCbCr written out from the textbook definitions.
void yuv(const float* rgb, double out[3]);
void yuv(const double* rgb, double out[3]);

double smooth_weight(const float* a_rgb, const float* b_rgb, double sigma);

// Per-round trace images; x[t] and s[t] as recorded in EnhanceTrace.
double enhancement_loss(const Image& y, const std::vector<Image>& x, const std::vector<Image>& s, double alpha,
                        double beta, double sigma);

Image merge(const Image& in, const Image& out, const Mask& m);
double recon_loss(const Image& out, const Image& gt, const Mask& m, double hole_w);
double gen_gan_loss(const std::vector<double>& scores, double w);
double disc_loss(const std::vector<double>& real, const std::vector<double>& fake);
double tv_loss(const Image& img);

// C x C, normalized by C*H*W.
std::vector<double> gram(const Feat& f);

// Test-mode VGG layout forward with taps after indices 4, 9 and 16.
std::vector<Feat> vgg_features(const mer::Params& weights, const Image& img);
double perceptual_loss(const std::vector<Feat>& o, const std::vector<Feat>& m, const std::vector<Feat>& g);
double style_loss(const std::vector<Feat>& o, const std::vector<Feat>& m, const std::vector<Feat>& g);
double perc_dist(const std::vector<Feat>& a, const std::vector<Feat>& b);

double psnr(const Image& a, const Image& b);
// Full 2-D 11x11 Gaussian window slid over every valid position.
double ssim(const Image& a, const Image& b);

// Sort-based linear quantile.
double quantile(std::vector<double> v, double p);

Image random_image(int h, int w, int c, std::mt19937_64& rng, float lo = 0.0f, float hi = 1.0f);
Mask random_mask(int h, int w, double p, std::mt19937_64& rng);

}  // namespace oracle
