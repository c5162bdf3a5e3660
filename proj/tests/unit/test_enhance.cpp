#include <gtest/gtest.h>

#include <random>

#include "mer/error.hpp"
#include "mer/enhance.hpp"
#include "oracles.hpp"

using namespace mer;

namespace {

Params random_nets(int channels, std::uint64_t seed, float scale = 1.0f) {
  Params p;
  std::mt19937_64 rng(seed);
  init_network(enhance_network("enh.h", channels), p, rng);
  init_network(enhance_network("enh.k", channels), p, rng);
  for (auto& [n, t] : p)
    for (float& v : t.values()) v *= scale;
  return p;
}

Params zero_nets(int channels) {
  Params p = random_nets(channels, 1);
  for (auto& [n, t] : p) t.fill(0.0f);
  return p;
}

EnhanceHyper small_hyper() {
  EnhanceHyper h;
  h.channels = 4;
  return h;
}

}  // namespace

TEST(Enhance, ZeroResidualKeepsInput) {
  std::mt19937_64 rng(1);
  const Image v = oracle::random_image(8, 8, 3, rng, 0.1f, 0.9f);
  const auto [u, x] = enhance_round(v, zero_nets(4), small_hyper());
  for (float s : u.samples()) EXPECT_EQ(s, 0.0f);
  EXPECT_EQ(x, v);
}

TEST(Enhance, RoundMatchesManualComposition) {
  std::mt19937_64 rng(2);
  const Params p = random_nets(4, 3, 0.3f);
  const Image v = oracle::random_image(8, 8, 3, rng);
  const auto [u, x] = enhance_round(v, p, small_hyper());
  oracle::Feat f = oracle::from_image(v);
  f = oracle::relu(oracle::conv2d(f, p.at("enh.h.l0.weight"), &p.at("enh.h.l0.bias"), 1, 1));
  f = oracle::relu(oracle::conv2d(f, p.at("enh.h.l1.weight"), &p.at("enh.h.l1.bias"), 1, 1));
  f = oracle::conv2d(f, p.at("enh.h.l2.weight"), &p.at("enh.h.l2.bias"), 1, 1);
  for (int y = 0; y < 8; ++y)
    for (int xx = 0; xx < 8; ++xx)
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(u.at(y, xx, c), f.at(c, y, xx), 1e-6);
        EXPECT_NEAR(x.at(y, xx, c), std::max(double(v.at(y, xx, c)) + f.at(c, y, xx), 1e-4), 1e-6);
      }
}

TEST(Enhance, CalibrationExamples) {
  std::mt19937_64 rng(4);
  const Image y = oracle::random_image(8, 8, 3, rng, 0.05f, 0.4f);
  const auto [z, v, s] = calibrate_round(Image(8, 8, 3, 1.0f), y, zero_nets(4), small_hyper());
  EXPECT_EQ(z, y);
  EXPECT_EQ(v, y);
  Image x(8, 8, 3, 0.5f);
  x.at(3, 3, 1) = 0.0f;
  const auto [z2, v2, s2] = calibrate_round(x, y, random_nets(4, 5), small_hyper());
  EXPECT_FLOAT_EQ(z2.at(3, 3, 1), static_cast<float>(y.at(3, 3, 1) / 1e-4));
  for (float t : v2.samples()) EXPECT_TRUE(std::isfinite(t));
}

TEST(Enhance, ZeroNetsEnhanceToOnes) {
  std::mt19937_64 rng(6);
  const Image y = oracle::random_image(8, 8, 3, rng, 0.01f, 0.3f);
  const EnhanceResult r = run_enhancement(y, zero_nets(4), small_hyper());
  ASSERT_EQ(r.trace.rounds.size(), 6u);
  EXPECT_EQ(r.trace.rounds.back().x, y);
  for (float s : r.enhanced.samples()) EXPECT_EQ(s, 1.0f);
}

TEST(Enhance, DefaultInitIsIdentityChain) {
  Params p;
  EnhanceHyper h = small_hyper();
  init_enhance(p, h, 9);
  std::mt19937_64 rng(7);
  const Image y = oracle::random_image(8, 8, 3, rng, 0.01f, 0.3f);
  const EnhanceResult r = run_enhancement(y, p, h);
  EXPECT_EQ(r.trace.rounds.back().x, y);
  for (const auto& round : r.trace.rounds)
    for (float s : round.s.samples()) EXPECT_EQ(s, 0.0f);
}

TEST(Enhance, TraceStructure) {
  std::mt19937_64 rng(8);
  const Image y = oracle::random_image(8, 8, 3, rng, 0.01f, 0.5f);
  const EnhanceHyper h = small_hyper();
  const EnhanceResult r = run_enhancement(y, random_nets(4, 9, 0.5f), h);
  ASSERT_EQ(static_cast<int>(r.trace.rounds.size()), h.rounds);
  EXPECT_EQ(r.trace.rounds[0].v, y);
  for (float s : r.trace.rounds[0].s.samples()) EXPECT_EQ(s, 0.0f);
  for (const auto& round : r.trace.rounds)
    for (std::size_t i = 0; i < y.size(); ++i) {
      const float want = std::max(round.v.samples()[i] + round.u.samples()[i], 1e-4f);
      EXPECT_NEAR(round.x.samples()[i], want, 1e-6);
      EXPECT_GE(round.x.samples()[i], 1e-4f);
    }
  for (float s : r.enhanced.samples()) {
    EXPECT_GE(s, 0.0f);
    EXPECT_LE(s, 1.0f);
  }
}

TEST(Enhance, WeightSharingReachesEveryRound) {
  std::mt19937_64 rng(10);
  const Image y = oracle::random_image(8, 8, 3, rng, 0.05f, 0.5f);
  Params p = random_nets(4, 11, 0.5f);
  const EnhanceResult a = run_enhancement(y, p, small_hyper());
  p.at("enh.h.l0.bias")[0] += 0.05f;
  const EnhanceResult b = run_enhancement(y, p, small_hyper());
  for (std::size_t t = 0; t < a.trace.rounds.size(); ++t) EXPECT_NE(a.trace.rounds[t].u, b.trace.rounds[t].u) << t;
}

TEST(Enhance, OutputBoundedForWildParameters) {
  std::mt19937_64 rng(12);
  const Image y = oracle::random_image(8, 8, 3, rng);
  const Image out = enhance_image(y, random_nets(4, 13, 50.0f), small_hyper());
  for (float s : out.samples()) {
    EXPECT_GE(s, 0.0f);
    EXPECT_LE(s, 1.0f);
  }
}

TEST(EnhanceLoss, VanishesForConsistentFlatTrace) {
  const EnhanceHyper h = small_hyper();
  EnhanceTrace tr;
  tr.y = Image(8, 8, 3, 0.2f);
  for (int t = 0; t < h.rounds; ++t) {
    EnhanceRound r;
    r.s = Image(8, 8, 3, t == 0 ? 0.0f : 0.1f);
    r.x = Image(8, 8, 3, t == 0 ? 0.2f : 0.3f);
    tr.rounds.push_back(r);
  }
  // x^t == y + s^{t-1} and x^t constant
  EXPECT_NEAR(enhancement_loss(tr, h), 0.0, 1e-12);
}

TEST(EnhanceLoss, WeightProperties) {
  const float a[3] = {0.3f, 0.6f, 0.1f}, b[3] = {0.5f, 0.2f, 0.9f};
  EXPECT_EQ(smoothness_weight(a, a, 0.1), 1.0);
  const double w = smoothness_weight(a, b, 0.1);
  EXPECT_GT(w, 0.0);
  EXPECT_LE(w, 1.0);
  EXPECT_EQ(w, smoothness_weight(b, a, 0.1));
}

TEST(EnhanceLoss, MatchesOracleOn8x8) {
  std::mt19937_64 rng(14);
  const EnhanceHyper h = small_hyper();
  for (int c = 0; c < 10; ++c) {
    EnhanceTrace tr;
    tr.y = oracle::random_image(8, 8, 3, rng, 0.0f, 0.4f);
    std::vector<Image> xs, ss;
    for (int t = 0; t < h.rounds; ++t) {
      EnhanceRound r;
      r.x = oracle::random_image(8, 8, 3, rng, 0.2f, 0.3f);
      r.s = oracle::random_image(8, 8, 3, rng, -0.02f, 0.02f);
      xs.push_back(r.x);
      ss.push_back(r.s);
      tr.rounds.push_back(r);
    }
    EXPECT_NEAR(enhancement_loss(tr, h), oracle::enhancement_loss(tr.y, xs, ss, h.alpha, h.beta, h.sigma), 1e-9);
  }
}

TEST(EnhanceLoss, IncompleteTraceIsStateError) {
  EnhanceTrace tr;
  tr.y = Image(4, 4, 3, 0.1f);
  tr.rounds.resize(2);
  EXPECT_THROW(enhancement_loss(tr, small_hyper()), StateError);
  tr.rounds.resize(6);
  EXPECT_THROW(enhancement_loss(tr, small_hyper()), StateError);
}

TEST(EnhanceHyper, Validation) {
  EnhanceHyper h;
  h.rounds = 0;
  EXPECT_THROW(h.validate(), ArgumentError);
  h = {};
  h.sigma = 0;
  EXPECT_THROW(h.validate(), ArgumentError);
  h = {};
  h.alpha = -1;
  EXPECT_THROW(h.validate(), ArgumentError);
}
