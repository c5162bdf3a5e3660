#include "criteria.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>
#include <unistd.h>

#include "mer/checkpoint.hpp"
#include "mer/enhance.hpp"
#include "mer/flawfind.hpp"
#include "mer/gradcheck.hpp"
#include "mer/inpaint.hpp"
#include "mer/losses.hpp"
#include "mer/maskgen.hpp"
#include "mer/metrics.hpp"
#include "mer/pipeline.hpp"
#include "mer/png.hpp"
#include "mer/spectral.hpp"
#include "mer/trainer.hpp"
#include "oracles.hpp"

namespace acceptance {

namespace {

using namespace mer;
namespace fs = std::filesystem;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Worst {
  double err = 0.0;
  std::string where;
  void note(double e, const std::string& w) {
    if (!(e <= err)) {
      err = e;
      where = w;
    }
  }
};

Tensor<float> random_scores(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> d(-0.5f, 1.5f);
  Tensor<float> t({1, 1, 16, 16});
  for (float& v : t.values()) v = d(rng);
  return t;
}

std::vector<double> as_double(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

// ---- equation oracles ----

Outcome equation_oracles() {
  constexpr int kCases = 100, kSize = 16;
  constexpr double kTol = 1e-6;
  std::mt19937_64 rng(2024);
  const FeatureExtractor fx = FeatureExtractor::test_mode();
  std::map<std::string, Worst> worst;
  const EnhanceHyper hyper;
  const LossWeights w;

  for (int c = 0; c < kCases; ++c) {
    const std::string tag = "case " + std::to_string(c);
    // enhancement loss
    {
      EnhanceTrace trace;
      trace.y = oracle::random_image(kSize, kSize, 3, rng, 0.01f, 0.3f);
      std::vector<Image> xs, ss;
      for (int t = 0; t < hyper.rounds; ++t) {
        EnhanceRound r;
        r.x = oracle::random_image(kSize, kSize, 3, rng, 0.01f, 1.0f);
        r.s = t == 0 ? Image(kSize, kSize, 3) : oracle::random_image(kSize, kSize, 3, rng, -0.05f, 0.05f);
        xs.push_back(r.x);
        ss.push_back(r.s);
        trace.rounds.push_back(r);
      }
      const double got = enhancement_loss(trace, hyper);
      const double want = oracle::enhancement_loss(trace.y, xs, ss, hyper.alpha, hyper.beta, hyper.sigma);
      worst["L_E"].note(std::abs(got - want), tag);
    }
    // smoothness weights over every 4-neighbour pair of a smooth-ish tile
    {
      Image ref = oracle::random_image(kSize, kSize, 3, rng, 0.3f, 0.5f);
      double e = 0.0;
      for (int y = 0; y < kSize; ++y)
        for (int x = 0; x < kSize; ++x)
          for (const auto& [ny, nx] : {std::pair{y, x + 1}, std::pair{y + 1, x}}) {
            if (ny >= kSize || nx >= kSize) continue;
            float a[3], b[3];
            for (int k = 0; k < 3; ++k) {
              a[k] = ref.at(y, x, k);
              b[k] = ref.at(ny, nx, k);
            }
            e = std::max(e, std::abs(smoothness_weight(a, b, hyper.sigma) - oracle::smooth_weight(a, b, hyper.sigma)));
          }
      worst["omega"].note(e, tag);
    }
    const Image in = oracle::random_image(kSize, kSize, 3, rng);
    const Image out = oracle::random_image(kSize, kSize, 3, rng);
    const Image gt = oracle::random_image(kSize, kSize, 3, rng);
    const Mask m = oracle::random_mask(kSize, kSize, 0.3, rng);
    // merge
    {
      const Image got = merge_with_mask(in, out, m);
      const Image want = oracle::merge(in, out, m);
      worst["merge"].note(got == want ? 0.0 : 1.0, tag);
    }
    // reconstruction
    worst["L_r"].note(std::abs(recon_loss(out, gt, m, w.hole) - oracle::recon_loss(out, gt, m, w.hole)), tag);
    // adversarial terms
    {
      const Tensor<float> real = random_scores(rng), fake = random_scores(rng);
      worst["L_G^C"].note(std::abs(gen_gan_loss(fake, w.gan_gen) - oracle::gen_gan_loss(as_double(fake), w.gan_gen)),
                        tag);
      worst["L_D"].note(std::abs(disc_loss(real, fake) - oracle::disc_loss(as_double(real), as_double(fake))), tag);
    }
    // tv, perceptual, style and the stage sum
    {
      const Image mer = oracle::merge(in, out, m);
      const auto fo = oracle::vgg_features(fx.weights(), out);
      const auto fm = oracle::vgg_features(fx.weights(), mer);
      const auto fg = oracle::vgg_features(fx.weights(), gt);
      const double tv = oracle::tv_loss(mer), per = oracle::perceptual_loss(fo, fm, fg),
                   sty = oracle::style_loss(fo, fm, fg), rec = oracle::recon_loss(out, gt, m, w.hole);
      const double tv_got = tv_loss(mer), per_got = perceptual_loss(fx, out, mer, gt),
                   sty_got = style_loss(fx, out, mer, gt);
      worst["L_tv"].note(std::abs(tv_got - tv), tag);
      worst["L_per"].note(std::abs(per_got - per), tag);
      worst["L_sty"].note(std::abs(sty_got - sty), tag);
      const double want = rec + 0.1 * tv + 0.05 * per + 120.0 * sty;
      const double got = stage_loss(recon_loss(out, gt, m, w.hole), tv_got, per_got, sty_got, w);
      worst["stage loss"].note(std::abs(got - want), tag);
    }
  }
  bool ok = true;
  std::ostringstream os;
  for (const auto& [eq, wv] : worst) {
    ok = ok && wv.err <= kTol;
    os << eq << " " << fmt("%.2e", wv.err) << (wv.err <= kTol ? "" : " (" + wv.where + ")") << "; ";
  }
  os << kCases << " cases each, tol 1e-6";
  return {ok, os.str()};
}

// ---- gradients ----

ParamMap<double> prefixed(const Params& p, const std::vector<std::string>& prefixes) {
  ParamMap<double> out;
  for (const auto& [name, t] : p)
    for (const auto& pre : prefixes)
      if (name.rfind(pre, 0) == 0) out.emplace(name, t.cast<double>());
  return out;
}

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Random projection keeps every output entry in play.
Var project(Graph<double>& g, Var out, std::mt19937_64& rng) {
  return sum(g, mul(g, out, g.constant(random_tensor(g.shape(out), rng, -1.0, 1.0))));
}

Outcome gradients() {
  constexpr double kTol = 1e-3;
  std::mt19937_64 rng(99);
  std::vector<std::pair<std::string, GradCheckResult>> results;
  int kink_near = 0, kink_at = 0, noise_zero = 0;
  std::vector<std::string> unexplained_names;
  auto check = [&](const std::string& name, const ParamMap<double>& leaves, const LossBuilder& build,
                   int samples) {
    GradCheckOptions opt;
    opt.samples_per_tensor = samples;
    opt.tolerance = kTol;
    GradCheckResult r = finite_diff_check(leaves, build, opt);
    // Diagnostics only: sort entries over tolerance by what the finite difference saw.
    auto rel_of = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); };
    for (const GradCheckEntry& e : r.over) {
      const double n = numeric_derivative(leaves, build, e.name, e.index, 1e-6);
      if (rel_of(e.analytic, n) < kTol) {
        ++kink_near;
        continue;
      }
      if (std::abs(e.analytic) < 1e-6 && std::abs(n) < 1e-6) {
        ++noise_zero;
        continue;
      }
      ParamMap<double> w = leaves;
      const double h = 1e-7, f0 = evaluate_loss(w, build);
      w[e.name][e.index] += h;
      const double fwd = (evaluate_loss(w, build) - f0) / h;
      w[e.name][e.index] -= 2 * h;
      const double bwd = (f0 - evaluate_loss(w, build)) / h;
      if (rel_of(e.analytic, fwd) < kTol || rel_of(e.analytic, bwd) < kTol) {
        ++kink_at;
        continue;
      }
      unexplained_names.push_back(name + ":" + e.name + "[" + std::to_string(e.index) + "] a=" +
                                  fmt("%.3g", e.analytic) + " n=" + fmt("%.3g", n));
    }
    results.emplace_back(name, std::move(r));
  };

  EnhanceHyper eh;
  eh.channels = 4;
  eh.rounds = 3;
  Params ep;
  {
    std::mt19937_64 r(5);
    init_network(enhance_network("enh.h", 4), ep, r);
    init_network(enhance_network("enh.k", 4), ep, r);
  }
  const Tensor<double> y16 = random_tensor({1, 3, 16, 16}, rng, 0.02, 0.3);
  for (const char* net : {"enh.h", "enh.k"}) {
    const std::uint64_t proj_seed = rng();
    check(std::string(net) == "enh.h" ? "H" : "K", prefixed(ep, {net}),
          [&, net, proj_seed](Scope<double>& s) {
            std::mt19937_64 r(proj_seed);
            Var out = forward_sequence(s, enhance_network(net, 4), s.graph().constant(y16));
            return project(s.graph(), out, r);
          },
          0);
  }
  check("L_E through cascade", prefixed(ep, {"enh."}), [&](Scope<double>& s) {
    auto vars = enhance_graph(s, s.graph().constant(y16), eh);
    return enhancement_loss(s.graph(), vars, eh);
  }, 8);

  InpaintConfig cfg;
  cfg.width = 4;
  Params ip;
  init_inpaint(ip, cfg, 11);
  const Tensor<double> img256 = random_tensor({1, 3, 256, 256}, rng, 0.0, 1.0);
  Tensor<double> mask256({1, 1, 256, 256});
  {
    std::bernoulli_distribution b(0.3);
    for (double& v : mask256.values()) v = b(rng) ? 1.0 : 0.0;
  }
  auto net_check = [&](const std::string& name, const std::string& prefix, int samples, auto forward) {
    const std::uint64_t proj_seed = rng();
    check(name, prefixed(ip, {prefix}), [&, proj_seed, forward](Scope<double>& s) {
      std::mt19937_64 r(proj_seed);
      return project(s.graph(), forward(s), r);
    }, samples);
  };
  net_check("Net_C", "netc.", 2, [&](Scope<double>& s) {
    return netc_forward(s, s.graph().constant(img256), mask256, cfg);
  });
  const Tensor<double> img32 = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
  net_check("Net_L", "netl.", 3, [&](Scope<double>& s) { return netl_forward(s, s.graph().constant(img32), cfg); });
  net_check("Net_G", "netg.", 1, [&](Scope<double>& s) {
    return netg_forward(s, s.graph().constant(img256), cfg);
  });
  SpectralStates states = make_spectral_states(cfg, 3);
  update_spectral_states(ip, states, 1);
  const auto sv = spectral_vectors<double>(states);
  net_check("D", "disc.", 6, [&](Scope<double>& s) {
    s.set_spectral(&sv);
    return disc_forward(s, s.graph().constant(img256), cfg);
  });

  // Losses with respect to their image inputs.
  const Tensor<double> gt = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor<double> m16({1, 1, 16, 16});
  {
    std::bernoulli_distribution b(0.3);
    for (double& v : m16.values()) v = b(rng) ? 1.0 : 0.0;
  }
  ParamMap<double> img_leaves;
  img_leaves.emplace("out", random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0));
  img_leaves.emplace("in", random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0));
  check("L_r with merge", img_leaves, [&](Scope<double>& s) {
    Graph<double>& g = s.graph();
    Var mer = merge(g, s.param("in"), s.param("out"), m16);
    return add(g, recon_loss(g, s.param("out"), g.constant(gt), m16), recon_loss(g, mer, g.constant(gt), m16));
  }, 0);
  ParamMap<double> score_leaves;
  score_leaves.emplace("real", random_tensor({1, 1, 16, 16}, rng, -0.5, 1.5));
  score_leaves.emplace("fake", random_tensor({1, 1, 16, 16}, rng, -0.5, 1.5));
  check("L_G^C", score_leaves, [&](Scope<double>& s) { return gen_gan_loss(s.graph(), s.param("fake")); }, 0);
  check("L_D", score_leaves,
        [&](Scope<double>& s) { return disc_loss(s.graph(), s.param("real"), s.param("fake")); }, 0);
  check("L_tv", img_leaves, [&](Scope<double>& s) { return tv_loss(s.graph(), s.param("out")); }, 0);
  const FeatureExtractor fx = FeatureExtractor::test_mode();
  auto feature_loss = [&](bool style) {
    return [&, style](Scope<double>& s) {
      Graph<double>& g = s.graph();
      Var mer = merge(g, s.param("in"), s.param("out"), m16);
      auto fo = fx.extract(g, s.param("out"));
      auto fm = fx.extract(g, mer);
      auto fg = fx.extract(g, g.constant(gt));
      return style ? style_loss(g, fo, fm, fg) : perceptual_loss(g, fo, fm, fg);
    };
  };
  check("L_per", img_leaves, feature_loss(false), 64);
  check("L_sty", img_leaves, feature_loss(true), 64);
  ParamMap<double> trace_leaves;
  for (int t = 0; t < 3; ++t) {
    trace_leaves.emplace("x" + std::to_string(t), random_tensor({1, 3, 16, 16}, rng, 0.05, 1.0));
    trace_leaves.emplace("s" + std::to_string(t), random_tensor({1, 3, 16, 16}, rng, -0.05, 0.05));
  }
  check("L_E w.r.t. x and s", trace_leaves, [&](Scope<double>& s) {
    std::vector<Var> x, sv2;
    for (int t = 0; t < 3; ++t) {
      x.push_back(s.param("x" + std::to_string(t)));
      sv2.push_back(s.param("s" + std::to_string(t)));
    }
    return enhancement_loss(s.graph(), s.graph().constant(y16), x, sv2, eh);
  }, 64);

  bool ok = true;
  std::ostringstream os;
  int checked = 0;
  for (const auto& [name, r] : results) {
    ok = ok && r.max_rel_error < kTol && r.checked > 0;
    checked += r.checked;
    os << name << " " << fmt("%.1e", r.max_rel_error);
    if (r.max_rel_error >= kTol) os << " at " << r.worst;
    os << "; ";
  }
  os << checked << " entries, tol 1e-3 at step 1e-4";
  if (kink_near + kink_at + noise_zero + unexplained_names.size() > 0) {
    os << "; over tol: " << kink_near << " agree at step 1e-6 (ReLU kink within 1e-4), " << kink_at
       << " match a one-sided derivative (point on a kink), " << noise_zero << " zero gradient at noise level, "
       << unexplained_names.size() << " unexplained";
    for (std::size_t i = 0; i < std::min<std::size_t>(unexplained_names.size(), 5); ++i)
      os << (i ? ", " : " (") << unexplained_names[i];
    if (!unexplained_names.empty()) os << ")";
  }
  return {ok, os.str()};
}

// ---- merge invariant ----

Image adversarial_image(int h, int w, std::mt19937_64& rng) {
  static const float special[] = {0.0f, -0.0f, 1.0f, std::numeric_limits<float>::denorm_min(),
                                  -std::numeric_limits<float>::denorm_min(), 1e30f, -1e30f, 0.5f};
  std::uniform_real_distribution<float> d(-2.0f, 2.0f);
  std::uniform_int_distribution<int> pick(0, 15);
  Image img(h, w, 3);
  for (float& v : img.samples()) {
    const int k = pick(rng);
    v = k < 8 ? special[k] : d(rng);
  }
  return img;
}

bool known_pixels_equal(const Image& merged, const Image& in, const Mask& m) {
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) {
      if (m.at(y, x)) continue;
      for (int c = 0; c < in.channels(); ++c) {
        const float a = merged.at(y, x, c), b = in.at(y, x, c);
        if (std::memcmp(&a, &b, sizeof a) != 0) return false;
      }
    }
  return true;
}

Outcome merge_invariant() {
  constexpr int kCases = 1000, kNetworkCases = 20;
  std::mt19937_64 rng(314);
  std::uniform_int_distribution<int> dim(8, 48);
  std::uniform_real_distribution<double> cov(0.0, 1.0);
  int bad = 0, checks = 0;
  InpaintConfig cfg;
  cfg.width = 4;
  cfg.netl_scale = 1;
  for (int c = 0; c < kCases - kNetworkCases; ++c) {
    const int h = dim(rng), w = dim(rng);
    const Image in = adversarial_image(h, w, rng);
    const Mask m = oracle::random_mask(h, w, cov(rng), rng);
    Tensor<float> mt = mask_to_tensor<float>(m);
    // coarse, local and global share the merge; each gets its own output
    for (int stage = 0; stage < 3; ++stage) {
      const Image out = adversarial_image(h, w, rng);
      Graph<float> g;
      Var merged = merge(g, g.constant(image_to_tensor<float>(in)), g.parameter(image_to_tensor<float>(out)), mt);
      bad += !known_pixels_equal(tensor_to_image(g.value(merged)), in, m);
      bad += !known_pixels_equal(merge_with_mask(in, out, m), in, m);
      checks += 2;
    }
  }
  for (int c = 0; c < kNetworkCases; ++c) {
    Params p;
    init_inpaint(p, cfg, 1000 + c);
    MaskSpec spec;
    spec.family = all_families()[c % 5];
    spec.coverage = 0.05 + 0.45 * cov(rng);
    spec.seed = rng();
    const Mask m = generate_mask(spec);
    Image in = adversarial_image(256, 256, rng);
    for (float& v : in.samples()) v = std::clamp(v, 0.0f, 1.0f);
    const StageImages st = inpaint_stages(p, in, m);
    for (const Image* merged : {&st.coarse, &st.local, &st.global}) {
      bad += !known_pixels_equal(*merged, in, m);
      ++checks;
    }
  }
  return {bad == 0, std::to_string(kCases) + " cases (" + std::to_string(kNetworkCases) +
                        " through width-4 networks), " + std::to_string(checks) + " stage merges, " +
                        std::to_string(bad) + " with a changed known pixel"};
}

// ---- spectral norm ----

Outcome spectral_norm() {
  constexpr int kCases = 100;
  std::mt19937_64 rng(77);
  std::normal_distribution<float> d(0.0f, 0.05f);
  int inside = 0;
  double lo = 1e9, hi = 0;
  for (int c = 0; c < kCases; ++c) {
    Tensor<float> w({64, 64, 1, 1});
    for (float& v : w.values()) v = d(rng);
    PowerIterState st = make_power_state(64, rng());
    const Tensor<float> wn = spectral_normalize(w, st, 5);
    Eigen::MatrixXd m(64, 64);
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) m(i, j) = wn[static_cast<std::size_t>(i) * 64 + j];
    const double top = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
    lo = std::min(lo, top);
    hi = std::max(hi, top);
    inside += top >= 0.95 && top <= 1.05;
  }
  return {inside == kCases, std::to_string(inside) + "/" + std::to_string(kCases) +
                                " normalized weights with top singular value in [0.95, 1.05]; range [" +
                                fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "]"};
}

// ---- alternating-phase freeze ----

const std::vector<std::string> kEnhPrefix = {"enh."};
const std::vector<std::string> kInpPrefix = {"netc.", "netl.", "netg.", "disc."};

Outcome phase_freeze() {
  TrainingConfig def;
  const PhasePlan plan = partition_alternating(180, def);
  int plan_errors = 0;
  for (int i = 0; i < 180; ++i) {
    const bool want = (i % 60) < 6;
    plan_errors += (phase_of(plan, i) == Phase::Enhance) != want;
  }

  TrainingConfig cfg;
  cfg.batch = 2;
  cfg.subset = 6;
  cfg.enh_quota = 2;
  cfg.inpaint.width = 4;
  cfg.inpaint.netl_scale = 1;
  cfg.enhance.channels = 4;
  cfg.enhance.rounds = 2;
  cfg.lr0 = 1e-3;
  cfg.seed = 8;
  const auto data = make_synthetic_dataset(18, 256, 5, 0.1, 0.3);
  const auto samples = to_samples(data, 1);
  Trainer tr(cfg, FeatureExtractor::test_mode());
  std::string enh = params_hash(tr.params(), kEnhPrefix), inp = params_hash(tr.params(), kInpPrefix);
  int frozen_changed = 0, own_unchanged = 0, steps = 0, enh_steps = 0;
  tr.train_epoch(samples, 0, [&](const StepReport& r) {
    const std::string e2 = params_hash(tr.params(), kEnhPrefix), i2 = params_hash(tr.params(), kInpPrefix);
    if (r.phase == Phase::Enhance) {
      frozen_changed += i2 != inp;
      own_unchanged += e2 == enh;
      ++enh_steps;
    } else {
      frozen_changed += e2 != enh;
      own_unchanged += i2 == inp;
    }
    enh = e2;
    inp = i2;
    ++steps;
  });
  const bool ok = plan_errors == 0 && frozen_changed == 0 && own_unchanged == 0 && enh_steps == 3 && steps == 9;
  return {ok, "n=180 plan mismatches " + std::to_string(plan_errors) + "; 3-subset run: " + std::to_string(steps) +
                  " steps (" + std::to_string(enh_steps) + " ENHANCE), frozen hash changed " +
                  std::to_string(frozen_changed) + "x, active hash unchanged " + std::to_string(own_unchanged) + "x"};
}

// ---- overfit smoke ----

double hole_l1(const Image& out, const Image& gt, const Mask& m) {
  double acc = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x) {
      if (!m.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) acc += std::abs(double(out.at(y, x, c)) - gt.at(y, x, c));
      ++n;
    }
  return acc / (3.0 * static_cast<double>(n));
}

double mean_hole_l1(Trainer& tr, const std::vector<Sample>& samples) {
  double acc = 0.0;
  for (const auto& s : samples) {
    const InpaintBatch b = tr.inpaint_batch({&s});
    const InpaintForward f = evaluate_inpaint(tr.params(), tr.spectral(), tr.features(), tr.config(), b);
    acc += hole_l1(tensor_to_image(f.global), s.gt, s.mask);
  }
  return acc / static_cast<double>(samples.size());
}

double brightness_ratio(const Trainer& tr, const std::vector<Sample>& samples) {
  double dark = 0.0, lit = 0.0;
  for (const auto& s : samples) {
    dark += mean_value(s.dark);
    lit += mean_value(enhance_image(s.dark, tr.params(), tr.config().enhance));
  }
  return lit / dark;
}

Outcome overfit_smoke() {
  constexpr int kSteps = 300;
  const auto t0 = std::chrono::steady_clock::now();
  TrainingConfig cfg;
  cfg.batch = 1;
  cfg.lr0 = 1e-3;
  cfg.epochs_flat = 1000;
  cfg.epochs_decay = 1;
  cfg.inpaint.width = 16;
  cfg.inpaint.netl_scale = 1;
  cfg.enhance.channels = 16;
  cfg.seed = 3;
  const auto data = make_synthetic_dataset(8, 256, 12, 0.20, 0.35, {0.12});
  const auto samples = to_samples(data, 0);
  Trainer tr(cfg, FeatureExtractor::test_mode());
  const double l1_0 = mean_hole_l1(tr, samples);
  const double ratio_0 = brightness_ratio(tr, samples);
  int done = 0, enh = 0;
  for (int epoch = 0; done < kSteps; ++epoch) {
    tr.train_epoch(samples, epoch, [&](const StepReport& r) { enh += r.phase == Phase::Enhance; }, kSteps - done);
    done = static_cast<int>(tr.steps());
  }
  const double l1 = mean_hole_l1(tr, samples);
  const double ratio = brightness_ratio(tr, samples);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double drop = 1.0 - l1 / l1_0;
  const bool ok = drop >= 0.5 && ratio >= 2.0 && secs <= 1200.0;
  return {ok, "(a) hole L1 " + fmt("%.4f", l1_0) + " -> " + fmt("%.4f", l1) + " (drop " + fmt("%.1f%%", 100 * drop) +
                  ", need >= 50%); (b) brightness x" + fmt("%.2f", ratio) + " (init x" + fmt("%.2f", ratio_0) +
                  ", need >= 2); " + std::to_string(done) + " steps (" + std::to_string(enh) + " ENHANCE) in " +
                  fmt("%.0f s", secs) + " (limit 1200 s)"};
}

// ---- flaw finder ----

Outcome flaw_finder() {
  constexpr int kSize = 256;
  Image img(kSize, kSize, 3, 0.4f);
  Mask truth(kSize, kSize);
  const double r = std::sqrt(0.10 * kSize * kSize / 3.14159265358979323846);
  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x)
      if ((y - 127.5) * (y - 127.5) + (x - 127.5) * (x - 127.5) <= r * r) {
        truth.at(y, x) = 1;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0f;
      }
  ThresholdStats st;
  const Mask got = detect_flaws(img, FlawParams{}, &st);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    inter += got.bits()[i] && truth.bits()[i];
    uni += got.bits()[i] || truth.bits()[i];
  }
  const double iou = uni ? double(inter) / double(uni) : 0.0;

  // identities, exact as computed, and against an independent recomputation
  bool exact = st.g_th == st.g_avg + 3.0 * st.g_sigma;
  for (int c = 0; c < 3; ++c) exact = exact && st.p_th[c] == st.p_avg[c] + 2.0 * st.p_sigma[c];
  const Field f = gradient_magnitude(img);
  long double s = 0, s2 = 0;
  for (double v : f.values) s += v;
  const long double mean = s / f.values.size();
  for (double v : f.values) s2 += (v - mean) * (v - mean);
  const double sigma = std::sqrt(static_cast<double>(s2 / f.values.size()));
  const bool recomputed = std::abs(st.g_avg - double(mean)) < 1e-12 && std::abs(st.g_sigma - sigma) < 1e-12;
  const bool ok = iou >= 0.8 && exact && recomputed;
  return {ok, "IoU " + fmt("%.3f", iou) + " (need >= 0.8; " + std::to_string(got.count()) + " px flagged, blotch " +
                  std::to_string(truth.count()) + " px, P_th " + fmt("%.3f", st.p_th[0]) + "); identities " +
                  (exact ? "exact" : "BROKEN") + ", recomputed G stats " + (recomputed ? "agree" : "DISAGREE")};
}

// ---- mask generator ----

Outcome mask_generator() {
  int outside = 0, nondet = 0, total = 0;
  double worst = 0;
  for (MaskFamily fam : all_families())
    for (double target : {0.05, 0.20, 0.35, 0.50})
      for (std::uint64_t seed = 0; seed < 100; ++seed) {
        MaskSpec spec{fam, target, 256, seed};
        const Mask a = generate_mask(spec);
        const Mask b = generate_mask(spec);
        const double dev = std::abs(coverage_of(a) - target);
        worst = std::max(worst, dev);
        outside += dev > 0.02;
        nondet += !(a == b);
        ++total;
      }
  return {outside == 0 && nondet == 0, std::to_string(total) + " masks, " + std::to_string(outside) +
                                           " outside +-2 pp (worst " + fmt("%.4f", worst) + "), " +
                                           std::to_string(nondet) + " non-deterministic"};
}

// ---- metrics ----

Outcome metrics() {
  std::mt19937_64 rng(4242);
  // 0.25 -> 0.35 / 0.15 and 0.5 -> 0.4 keep the float error at ~6e-9 per sample
  Image a(64, 64, 3), b(64, 64, 3);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (coin(rng)) {
      a.samples()[i] = 0.5f;
      b.samples()[i] = 0.4f;
    } else {
      a.samples()[i] = 0.25f;
      b.samples()[i] = coin(rng) ? 0.35f : 0.15f;
    }
  }
  const double p = psnr(a, b);
  const bool psnr_ok = std::abs(p - 20.0) <= 1e-6;
  int ssim_self_bad = 0;
  double worst_psnr = 0, worst_ssim = 0;
  std::normal_distribution<float> noise(0.0f, 0.05f);
  for (int c = 0; c < 100; ++c) {
    const Image x = oracle::random_image(24, 24, 3, rng);
    Image y = x;
    for (float& v : y.samples()) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
    ssim_self_bad += ssim(x, x) != 1.0;
    worst_psnr = std::max(worst_psnr, std::abs(psnr(x, y) - oracle::psnr(x, y)));
    worst_ssim = std::max(worst_ssim, std::abs(ssim(x, y) - oracle::ssim(x, y)));
  }
  const bool ok = psnr_ok && ssim_self_bad == 0 && worst_psnr <= 1e-6 && worst_ssim <= 1e-6;
  return {ok, "PSNR(0.1 error) " + fmt("%.9f", p) + " dB; SSIM(a,a) != 1 in " + std::to_string(ssim_self_bad) +
                  "/100; oracle gaps PSNR " + fmt("%.1e", worst_psnr) + ", SSIM " + fmt("%.1e", worst_ssim)};
}

// ---- tiling ----

Outcome tiling() {
  std::vector<int> sizes;
  for (int s = 1; s <= 300; s += 7) sizes.push_back(s);
  for (int s : {511, 512, 513, 1024}) sizes.push_back(s);
  std::mt19937_64 rng(9);
  int bad = 0, pairs = 0;
  for (int h : sizes)
    for (int w : sizes) {
      const Image img = oracle::random_image(h, w, 3, rng);
      Mask m = oracle::random_mask(h, w, 0.5, rng);
      TileGrid gi, gm;
      const auto ti = split_tiles(img, kInpaintTile, &gi);
      const auto tm = split_tiles(m, kInpaintTile, &gm);
      bad += !(stitch_tiles(gi, ti) == img) || !(stitch_tiles(gm, tm) == m);
      ++pairs;
    }
  return {bad == 0, std::to_string(pairs) + " (H, W) pairs, image and mask; " + std::to_string(bad) + " mismatches"};
}

// ---- end-to-end determinism ----

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("mer_accept_det_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root / "in");
  TrainingConfig cfg;
  cfg.inpaint.width = 4;
  cfg.inpaint.netl_scale = 1;
  cfg.enhance.channels = 4;
  save_checkpoint(root / "model.ckpt", init_all_params(cfg));
  Image mural = synthetic_mural(512, 21);
  Image crop(300, 270, 3);
  for (int y = 0; y < 300; ++y)
    for (int x = 0; x < 270; ++x)
      for (int c = 0; c < 3; ++c) crop.at(y, x, c) = mural.at(y, x, c);
  for (int y = 120; y < 150; ++y)
    for (int x = 40; x < 90; ++x)
      for (int c = 0; c < 3; ++c) crop.at(y, x, c) = 1.0f;
  save_image(root / "in" / "wall.png", scale_brightness(crop, 0.37));
  MaskSpec ms{MaskFamily::Line, 0.2, 256, 4};
  Mask m(300, 270);
  const Mask g = generate_mask(ms);
  for (int y = 0; y < 300; ++y)
    for (int x = 0; x < 270; ++x) m.at(y, x) = g.at(y % 256, x % 256);
  save_mask(root / "wall.mask.png", m);

  int compared = 0, differing = 0;
  for (bool automatic : {false, true}) {
    std::vector<std::vector<Bytes>> runs;
    for (int run = 0; run < 2; ++run) {
      PipelineRequest req;
      req.inputs = {root / "in" / "wall.png"};
      if (automatic)
        req.auto_mask = true;
      else
        req.mask = root / "wall.mask.png";
      req.checkpoint = root / "model.ckpt";
      req.output_dir = root / ("out" + std::to_string(automatic) + std::to_string(run));
      req.emit_stages = true;
      const RestoreReport rep = run_restore(req);
      if (!rep.failures.empty()) throw std::runtime_error(rep.failures.front().message);
      std::vector<Bytes> files;
      for (const auto& p : rep.written) files.push_back(read_file(p));
      runs.push_back(std::move(files));
    }
    if (runs[0].size() != runs[1].size()) return {false, "runs wrote different file counts"};
    for (std::size_t i = 0; i < runs[0].size(); ++i) {
      ++compared;
      differing += runs[0][i] != runs[1][i];
    }
  }
  fs::remove_all(root);
  return {differing == 0 && compared == 12, std::to_string(compared) + " PNGs compared across repeated restores " +
                                                "(given and auto mask), " + std::to_string(differing) + " differ"};
}

}  // namespace

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"equation_oracles", "equation-oracle suite", equation_oracles},
      {"gradients", "gradient suite", gradients},
      {"merge_invariant", "merge/known-pixel invariant", merge_invariant},
      {"spectral_norm", "spectral norm", spectral_norm},
      {"phase_freeze", "alternating-phase freeze", phase_freeze},
      {"overfit_smoke", "overfit smoke test", overfit_smoke},
      {"flaw_finder", "flaw finder", flaw_finder},
      {"mask_generator", "mask generator", mask_generator},
      {"metrics", "metrics", metrics},
      {"tiling", "tiling", tiling},
      {"determinism", "end-to-end determinism", determinism},
  };
  return all;
}

}  // namespace acceptance
