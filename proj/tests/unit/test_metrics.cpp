#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mer/error.hpp"
#include "mer/metrics.hpp"
#include "oracles.hpp"

using namespace mer;

TEST(Psnr, Examples) {
  std::mt19937_64 rng(1);
  const Image a = oracle::random_image(16, 16, 3, rng);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  Image u(16, 16, 3, 0.25f), v(16, 16, 3, 0.35f);
  EXPECT_NEAR(psnr(u, v), 20.0, 1e-6);
  for (int i = 0; i < 20; ++i) {
    const Image b = oracle::random_image(16, 16, 3, rng);
    EXPECT_NEAR(psnr(a, b), oracle::psnr(a, b), 1e-9);
  }
  EXPECT_THROW(psnr(a, Image(16, 15, 3)), ArgumentError);
}

TEST(Psnr, DecreasesWithNoiseAmplitude) {
  std::mt19937_64 rng(2);
  const Image base(24, 24, 3, 0.5f);
  std::vector<float> unit(base.size());
  std::uniform_real_distribution<float> d(-1, 1);
  for (float& t : unit) t = d(rng);
  double prev = INFINITY;
  for (float amp : {0.01f, 0.02f, 0.05f, 0.1f, 0.2f, 0.4f}) {
    Image noisy = base;
    for (std::size_t i = 0; i < noisy.size(); ++i) noisy.samples()[i] += amp * unit[i];
    const double p = psnr(base, noisy);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Ssim, Examples) {
  std::mt19937_64 rng(3);
  const Image a = oracle::random_image(20, 20, 3, rng), b = oracle::random_image(20, 20, 3, rng);
  EXPECT_EQ(ssim(a, a), 1.0);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-6);
  EXPECT_THROW(ssim(Image(10, 30, 3), Image(10, 30, 3)), ArgumentError);
  EXPECT_THROW(ssim(a, Image(20, 21, 3)), ArgumentError);

  const double ma = 0.2, mb = 0.7, c1 = 0.01 * 0.01;
  const double closed = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
  EXPECT_NEAR(ssim(Image(16, 16, 3, 0.2f), Image(16, 16, 3, 0.7f)), closed, 1e-6);
}

TEST(PercDist, Properties) {
  const FeatureExtractor fx = FeatureExtractor::test_mode();
  std::mt19937_64 rng(4);
  const Image a = oracle::random_image(16, 16, 3, rng), b = oracle::random_image(16, 16, 3, rng);
  EXPECT_EQ(perc_dist(fx, a, a), 0.0);
  EXPECT_EQ(perc_dist(fx, a, b), perc_dist(fx, b, a));
  const auto fa = oracle::vgg_features(fx.weights(), a), fb = oracle::vgg_features(fx.weights(), b);
  EXPECT_NEAR(perc_dist(fx, a, b), oracle::perc_dist(fa, fb), 1e-6);
}

TEST(PercDist, BlendIsCloserInMostTrials) {
  const FeatureExtractor fx = FeatureExtractor::test_mode();
  std::mt19937_64 rng(5);
  int closer = 0;
  constexpr int kTrials = 1000;
  for (int t = 0; t < kTrials; ++t) {
    const Image a = oracle::random_image(12, 12, 3, rng), b = oracle::random_image(12, 12, 3, rng);
    Image mid = a;
    for (std::size_t i = 0; i < mid.size(); ++i) mid.samples()[i] = 0.5f * (a.samples()[i] + b.samples()[i]);
    closer += perc_dist(fx, a, mid) <= perc_dist(fx, a, b);
  }
  EXPECT_GE(closer, kTrials * 95 / 100);
}

TEST(Summary, MatchesOracleQuantiles) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> d(20, 3);
  for (int n : {1, 2, 7, 50}) {
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    const Summary s = summarize(v);
    EXPECT_EQ(s.count, static_cast<std::size_t>(n));
    double mean = 0;
    for (double x : v) mean += x;
    EXPECT_NEAR(s.mean, mean / n, 1e-9);
    EXPECT_NEAR(s.min, oracle::quantile(v, 0.0), 1e-9);
    EXPECT_NEAR(s.q1, oracle::quantile(v, 0.25), 1e-9);
    EXPECT_NEAR(s.median, oracle::quantile(v, 0.5), 1e-9);
    EXPECT_NEAR(s.q3, oracle::quantile(v, 0.75), 1e-9);
    EXPECT_NEAR(s.max, oracle::quantile(v, 1.0), 1e-9);
  }
  EXPECT_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
}

TEST(Summary, CoverageBands) {
  EXPECT_STREQ(coverage_band(0.05), "05-20");
  EXPECT_STREQ(coverage_band(0.2), "20-35");
  EXPECT_STREQ(coverage_band(0.49), "35-50");
  EXPECT_STREQ(coverage_band(0.5), "35-50");
  EXPECT_STREQ(coverage_band(0.6), "other");
}
