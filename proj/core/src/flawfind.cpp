#include "mer/flawfind.hpp"

#include <algorithm>
#include <cmath>

#include "mer/error.hpp"

namespace mer {

void FlawParams::validate() const {
  if (!(lambda_g > 0) || !(lambda_p > 0)) throw ArgumentError("lambda_g and lambda_p must be positive");
  if (closing_radius < 0) throw ArgumentError("closing radius must be >= 0");
}

std::vector<FlawParams> flaw_presets() { return {{4.0, 3.0, 1}, {4.0, 2.0, 1}, {5.0, 1.5, 1}}; }

Field gradient_magnitude(const Image& img) {
  if (img.channels() != 3) throw ArgumentError("gradient_magnitude needs a 3-channel image");
  const int h = img.height(), w = img.width();
  std::vector<double> y(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double v = 0.0;
      for (int k = 0; k < 3; ++k) v += kYuvFromRgb[0][k] * img.at(r, c, k);
      y[static_cast<std::size_t>(r) * w + c] = v;
    }
  auto at = [&](int r, int c) {
    r = std::clamp(r, 0, h - 1);
    c = std::clamp(c, 0, w - 1);
    return y[static_cast<std::size_t>(r) * w + c];
  };
  Field f{h, w, std::vector<double>(y.size())};
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double gx = 0.5 * (at(r, c + 1) - at(r, c - 1));
      const double gy = 0.5 * (at(r + 1, c) - at(r - 1, c));
      f.values[static_cast<std::size_t>(r) * w + c] = std::sqrt(gx * gx + gy * gy);
    }
  return f;
}

Mask gradient_threshold(const Field& field, double lambda_g, ThresholdStats* stats) {
  Mask out(field.height, field.width);
  const std::size_t n = field.values.size();
  if (n == 0) return out;
  double sum = 0.0;
  for (double v : field.values) sum += v;
  const double avg = sum / static_cast<double>(n);
  double var = 0.0;
  for (double v : field.values) var += (v - avg) * (v - avg);
  const double sigma = std::sqrt(var / static_cast<double>(n));
  const double th = avg + lambda_g * sigma;
  if (stats) {
    stats->g_avg = avg;
    stats->g_sigma = sigma;
    stats->g_th = th;
  }
  if (sigma == 0.0) return out;
  for (std::size_t i = 0; i < n; ++i) out.bits()[i] = field.values[i] > th ? 1 : 0;
  return out;
}

bool boundary_pixel_threshold(const Image& img, const Mask& boundary, double lambda_p, ThresholdStats& stats) {
  if (img.height() != boundary.height() || img.width() != boundary.width() || img.channels() != 3) {
    throw ArgumentError("boundary_pixel_threshold: shape mismatch");
  }
  const std::size_t count = boundary.count();
  stats.boundary_pixels = count;
  if (count == 0) return false;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        if (boundary.at(y, x)) sum += img.at(y, x, c);
    const double avg = sum / static_cast<double>(count);
    double var = 0.0;
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        if (boundary.at(y, x)) var += (img.at(y, x, c) - avg) * (img.at(y, x, c) - avg);
    const double sigma = std::sqrt(var / static_cast<double>(count));
    stats.p_avg[c] = avg;
    stats.p_sigma[c] = sigma;
    stats.p_th[c] = avg + lambda_p * sigma;
  }
  return true;
}

Mask detect_flaws_raw(const Image& img, const FlawParams& params, ThresholdStats* stats) {
  params.validate();
  ThresholdStats local;
  ThresholdStats& st = stats ? *stats : local;
  Mask boundary = gradient_threshold(gradient_magnitude(img), params.lambda_g, &st);
  Mask out(img.height(), img.width());
  if (!boundary_pixel_threshold(img, boundary, params.lambda_p, st)) return out;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c)
        if (img.at(y, x, c) > st.p_th[c]) {
          out.at(y, x) = 1;
          break;
        }
  return out;
}

Mask detect_flaws(const Image& img, const FlawParams& params, ThresholdStats* stats) {
  return close_mask(detect_flaws_raw(img, params, stats), params.closing_radius);
}

namespace {

// One-dimensional running max/min along rows (axis 1) or columns (axis 0).
Mask sweep(const Mask& m, int radius, bool dilate_op, int axis, std::uint8_t outside) {
  Mask out(m.height(), m.width());
  const int h = m.height(), w = m.width();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t acc = dilate_op ? 0 : 1;
      for (int d = -radius; d <= radius; ++d) {
        const int yy = axis == 0 ? y + d : y;
        const int xx = axis == 1 ? x + d : x;
        const std::uint8_t v = (yy < 0 || yy >= h || xx < 0 || xx >= w) ? outside : m.at(yy, xx);
        acc = dilate_op ? std::max(acc, v) : std::min(acc, v);
      }
      out.at(y, x) = acc;
    }
  return out;
}

}  // namespace

Mask dilate(const Mask& m, int radius) {
  if (radius <= 0) return m;
  return sweep(sweep(m, radius, true, 1, 0), radius, true, 0, 0);
}

Mask erode(const Mask& m, int radius) {
  if (radius <= 0) return m;
  return sweep(sweep(m, radius, false, 1, 1), radius, false, 0, 1);
}

Mask close_mask(const Mask& m, int radius) { return erode(dilate(m, radius), radius); }

}  // namespace mer
