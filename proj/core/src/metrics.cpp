#include "mer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mer {

namespace {

std::vector<double> luma_plane(const Image& img) {
  std::vector<double> out(img.pixel_count());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double v = 0.0;
      if (img.channels() == 1) {
        v = img.at(y, x, 0);
      } else {
        for (int c = 0; c < 3; ++c) v += kYuvFromRgb[0][c] * img.at(y, x, c);
      }
      out[static_cast<std::size_t>(y) * img.width() + x] = v;
    }
  return out;
}

// Valid-mode separable filter.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size());
  const int wo = w - r + 1, ho = h - r + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int i = 0; i < r; ++i) acc += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * wo + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int i = 0; i < r; ++i) acc += k[i] * tmp[static_cast<std::size_t>(y + i) * wo + x];
      out[static_cast<std::size_t>(y) * wo + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ArgumentError("psnr: shape mismatch");
  if (a.empty()) throw ArgumentError("psnr of empty images");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.samples()[i]) - b.samples()[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ArgumentError("ssim: shape mismatch");
  if (a.channels() != 1 && a.channels() != 3) throw ArgumentError("ssim needs 1 or 3 channels");
  constexpr int kWin = 11;
  if (a.height() < kWin || a.width() < kWin) throw ArgumentError("ssim: image smaller than the 11x11 window");
  std::vector<double> k(kWin);
  double ks = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    ks += k[i];
  }
  for (double& v : k) v /= ks;
  const int h = a.height(), w = a.width();
  const std::vector<double> x = luma_plane(a), y = luma_plane(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
  const auto sxx = filter_valid(xx, h, w, k), syy = filter_valid(yy, h, w, k), sxy = filter_valid(xy, h, w, k);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mx.size());
}

double perc_dist(const FeatureExtractor& fx, const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ArgumentError("perc_dist: shape mismatch");
  const auto fa = fx.extract(a), fb = fx.extract(b);
  double total = 0.0;
  for (std::size_t t = 0; t < fa.size(); ++t) {
    const int c = fa[t].dim(1);
    const std::size_t plane = static_cast<std::size_t>(fa[t].dim(2)) * fa[t].dim(3);
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      double na = 0.0, nb = 0.0;
      for (int k = 0; k < c; ++k) {
        na += double(fa[t][k * plane + p]) * fa[t][k * plane + p];
        nb += double(fb[t][k * plane + p]) * fb[t][k * plane + p];
      }
      na = std::sqrt(na) + 1e-10;
      nb = std::sqrt(nb) + 1e-10;
      for (int k = 0; k < c; ++k) {
        const double d = fa[t][k * plane + p] / na - fb[t][k * plane + p] / nb;
        acc += d * d;
      }
    }
    total += acc / (static_cast<double>(c) * plane);
  }
  return total / static_cast<double>(fa.size());
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ArgumentError("quantile of no values");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.min = quantile(values, 0.0);
  s.q1 = quantile(values, 0.25);
  s.median = quantile(values, 0.5);
  s.q3 = quantile(values, 0.75);
  s.max = quantile(values, 1.0);
  return s;
}

const char* coverage_band(double coverage) {
  if (coverage >= 0.05 && coverage < 0.20) return "05-20";
  if (coverage >= 0.20 && coverage < 0.35) return "20-35";
  if (coverage >= 0.35 && coverage <= 0.50) return "35-50";
  return "other";
}

}  // namespace mer
