#pragma once

#include <cstddef>
#include <vector>

#include "mer/image.hpp"
#include "mer/losses.hpp"

namespace mer {

// 10 log10(1 / MSE) over all samples; +infinity for identical images.
double psnr(const Image& a, const Image& b);

// Single-scale SSIM on luma: 11x11 Gaussian window (sigma 1.5), K1 0.01,
// K2 0.03, L 1, valid windows, mean-pooled. 1-channel images are used as is.
double ssim(const Image& a, const Image& b);

// Mean over extractor taps of the mean squared difference between features
// normalized to unit L2 norm across channels at every position. A feature
// distance proxy, not LPIPS.
double perc_dist(const FeatureExtractor& fx, const Image& a, const Image& b);

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

// Linear-interpolation quantile (position (n-1) p) of unsorted values.
double quantile(std::vector<double> values, double p);
Summary summarize(const std::vector<double>& values);

// Coverage band label used in reports: "05-20", "20-35", "35-50" or "other".
const char* coverage_band(double coverage);

}  // namespace mer
