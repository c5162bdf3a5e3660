#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "mer/image.hpp"

namespace mer {

struct FlawParams {
  double lambda_g = 3.0;
  double lambda_p = 2.0;
  int closing_radius = 1;

  void validate() const;
};

// Alternates shown alongside the defaults: (4,3), (4,2), (5,1.5).
std::vector<FlawParams> flaw_presets();

struct ThresholdStats {
  double g_avg = 0.0, g_sigma = 0.0, g_th = 0.0;
  std::array<double, 3> p_avg{}, p_sigma{}, p_th{};
  std::size_t boundary_pixels = 0;
};

// Scalar field, row-major.
struct Field {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// |grad Y| of BT.601 luma with central differences and replicated borders.
Field gradient_magnitude(const Image& img);

// Pixels whose magnitude exceeds G_avg + lambda_g * sigma_G (population std).
// A field with sigma_G == 0 yields an empty set.
Mask gradient_threshold(const Field& field, double lambda_g, ThresholdStats* stats = nullptr);

// Per-channel P_th = P_avg + lambda_p * sigma_P over boundary pixels.
// Returns false (no defects) for an empty boundary.
bool boundary_pixel_threshold(const Image& img, const Mask& boundary, double lambda_p, ThresholdStats& stats);

// Pixels with any channel above P_th, before closing.
Mask detect_flaws_raw(const Image& img, const FlawParams& params, ThresholdStats* stats = nullptr);
Mask detect_flaws(const Image& img, const FlawParams& params = {}, ThresholdStats* stats = nullptr);

// Square structuring element of side 2r+1. Erosion treats outside pixels as set.
Mask dilate(const Mask& m, int radius);
Mask erode(const Mask& m, int radius);
Mask close_mask(const Mask& m, int radius);

}  // namespace mer
