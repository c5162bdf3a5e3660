#include "mer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mer/checkpoint.hpp"
#include "mer/error.hpp"

namespace mer {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct ConfigKey {
  std::function<void(TrainingConfig&, const std::string&)> set;
  std::function<std::string(const TrainingConfig&)> get;
};

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw ArgumentError("config key '" + key + "': not a number: " + v);
  return d;
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long i = 0;
  try {
    i = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw ArgumentError("config key '" + key + "': not an integer: " + v);
  return i;
}

std::string fmt(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

#define MER_DOUBLE_KEY(name, field)                                                             \
  {name, {[](TrainingConfig& c, const std::string& v) { c.field = parse_double(name, v); }, \
          [](const TrainingConfig& c) { return fmt(c.field); }}}
#define MER_INT_KEY(name, field)                                                                          \
  {name, {[](TrainingConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(parse_int(name, v)); }, \
          [](const TrainingConfig& c) { return std::to_string(c.field); }}}

const std::vector<std::pair<std::string, ConfigKey>>& config_keys() {
  static const std::vector<std::pair<std::string, ConfigKey>> keys = {
      MER_INT_KEY("batch", batch),
      MER_DOUBLE_KEY("lr0", lr0),
      MER_INT_KEY("epochs_flat", epochs_flat),
      MER_INT_KEY("epochs_decay", epochs_decay),
      MER_INT_KEY("subset", subset),
      MER_INT_KEY("enh_quota", enh_quota),
      MER_DOUBLE_KEY("clip_norm", clip_norm),
      MER_INT_KEY("spectral_iterations", spectral_iterations),
      MER_INT_KEY("rounds", enhance.rounds),
      MER_DOUBLE_KEY("alpha", enhance.alpha),
      MER_DOUBLE_KEY("beta", enhance.beta),
      MER_DOUBLE_KEY("sigma", enhance.sigma),
      MER_DOUBLE_KEY("eps_div", enhance.eps_div),
      MER_INT_KEY("enh_channels", enhance.channels),
      MER_DOUBLE_KEY("hole_weight", weights.hole),
      MER_DOUBLE_KEY("gan_gen_weight", weights.gan_gen),
      MER_DOUBLE_KEY("lambda_tv", weights.tv),
      MER_DOUBLE_KEY("lambda_per", weights.per),
      MER_DOUBLE_KEY("lambda_sty", weights.sty),
      MER_INT_KEY("width", inpaint.width),
      MER_INT_KEY("netl_scale", inpaint.netl_scale),
      MER_INT_KEY("disc_width", inpaint.disc_width),
      MER_INT_KEY("seed", seed),
  };
  return keys;
}

#undef MER_DOUBLE_KEY
#undef MER_INT_KEY

template <typename T>
double scalar(Graph<T>& g, Var v) {
  return static_cast<double>(g.value(v)[0]);
}

// Weighted stage sum recon + tv*w.tv + per*w.per + sty*w.sty on the graph.
Var stage_sum(Graph<float>& g, Var recon, Var tv, Var per, Var sty, const LossWeights& w) {
  Var out = add(g, recon, scale(g, tv, w.tv));
  out = add(g, out, scale(g, per, w.per));
  return add(g, out, scale(g, sty, w.sty));
}

struct GeneratorVars {
  Var mer_c, mer_l, mer_g;
  Var recon_c, gan_c, local, global;
  Var objective;
};

GeneratorVars build_generator(Scope<float>& gen, Scope<float>& dsc, const FeatureExtractor& fx,
                              const TrainingConfig& cfg, const InpaintBatch& b) {
  Graph<float>& g = gen.graph();
  const LossWeights& w = cfg.weights;
  const InpaintConfig& ic = cfg.inpaint;
  Var in = g.constant(b.input);
  Var gt = g.constant(b.gt);
  const std::vector<Var> f_gt = fx.extract<float>(g, gt);

  GeneratorVars r;
  Var out_c = netc_forward(gen, in, b.mask, ic);
  r.mer_c = merge(g, in, out_c, b.mask);
  r.recon_c = recon_loss(g, out_c, gt, b.mask, w.hole);
  r.gan_c = gen_gan_loss(g, disc_forward(dsc, r.mer_c, ic), w.gan_gen);

  auto refine_stage = [&](Var out, Var mer) {
    const std::vector<Var> f_out = fx.extract<float>(g, out);
    const std::vector<Var> f_mer = fx.extract<float>(g, mer);
    return stage_sum(g, recon_loss(g, out, gt, b.mask, w.hole), tv_loss(g, mer),
                     perceptual_loss(g, f_out, f_mer, f_gt), style_loss(g, f_out, f_mer, f_gt), w);
  };
  Var out_l = netl_forward(gen, r.mer_c, ic);
  r.mer_l = merge(g, in, out_l, b.mask);
  r.local = refine_stage(out_l, r.mer_l);
  Var out_g = netg_forward(gen, r.mer_l, ic);
  r.mer_g = merge(g, in, out_g, b.mask);
  r.global = refine_stage(out_g, r.mer_g);

  r.objective = add(g, add(g, r.recon_c, r.gan_c), add(g, r.local, r.global));
  return r;
}

void check_finite(double v, const std::string& what, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw NumericError("non-finite " + what + " (" + fmt(v) + ") at step " + std::to_string(step) +
                       "; epoch aborted");
  }
}

}  // namespace

void TrainingConfig::validate() const {
  if (batch < 1) throw ArgumentError("batch must be >= 1");
  if (subset < 1) throw ArgumentError("subset must be >= 1");
  if (enh_quota < 0 || enh_quota >= subset) throw ArgumentError("enh_quota must be in [0, subset)");
  if (epochs_flat < 0 || epochs_decay < 1) throw ArgumentError("epochs_flat >= 0 and epochs_decay >= 1 required");
  if (!(lr0 > 0)) throw ArgumentError("lr0 must be positive");
  if (!(clip_norm > 0)) throw ArgumentError("clip_norm must be positive");
  if (spectral_iterations < 1) throw ArgumentError("spectral_iterations must be >= 1");
  enhance.validate();
  inpaint.validate();
}

TrainingConfig parse_training_config(const std::string& text) {
  TrainingConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& keys = config_keys();
    auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return k.first == key; });
    if (it == keys.end()) {
      throw ArgumentError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    it->second.set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

TrainingConfig load_training_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ArgumentError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_training_config(ss.str());
}

std::string format_training_config(const TrainingConfig& cfg) {
  std::string out;
  for (const auto& [name, key] : config_keys()) out += name + " = " + key.get(cfg) + "\n";
  return out;
}

double lr_at(int epoch, const TrainingConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.total_epochs()) {
    throw ArgumentError("epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(cfg.total_epochs()) + ")");
  }
  if (epoch < cfg.epochs_flat) return cfg.lr0;
  return cfg.lr0 * static_cast<double>(cfg.total_epochs() - epoch) / cfg.epochs_decay;
}

const char* phase_name(Phase p) { return p == Phase::Enhance ? "enhance" : "inpaint"; }

PhasePlan partition_alternating(int n_samples, const TrainingConfig& cfg) {
  if (n_samples < 1) throw ArgumentError("partition needs at least one sample");
  cfg.validate();
  PhasePlan plan;
  for (int begin = 0; begin < n_samples; begin += cfg.subset) {
    const int b = std::min(cfg.subset, n_samples - begin);
    // ceil(b * quota / subset) in integers
    const int enh = b == cfg.subset
                        ? cfg.enh_quota
                        : static_cast<int>((static_cast<long long>(b) * cfg.enh_quota + cfg.subset - 1) / cfg.subset);
    if (enh > 0) plan.push_back({begin, begin + enh, Phase::Enhance});
    if (enh < b) plan.push_back({begin + enh, begin + b, Phase::Inpaint});
  }
  return plan;
}

Phase phase_of(const PhasePlan& plan, int position) {
  for (const auto& r : plan) {
    if (position >= r.begin && position < r.end) return r.phase;
  }
  throw ArgumentError("position " + std::to_string(position) + " not covered by the plan");
}

std::vector<BatchRange> make_batches(const PhasePlan& plan, int batch) {
  if (batch < 1) throw ArgumentError("batch must be >= 1");
  std::vector<BatchRange> out;
  for (const auto& r : plan) {
    for (int b = r.begin; b < r.end; b += batch) out.push_back({b, std::min(b + batch, r.end), r.phase});
  }
  return out;
}

Image synthetic_mural(int size, std::uint64_t seed) {
  if (size < 1) throw ArgumentError("mural size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  static const double palette[][3] = {
      {0.78, 0.62, 0.40}, {0.70, 0.30, 0.22}, {0.25, 0.45, 0.42}, {0.85, 0.78, 0.60},
      {0.35, 0.30, 0.50}, {0.60, 0.55, 0.25}, {0.90, 0.85, 0.75}, {0.45, 0.20, 0.15},
  };
  constexpr int kColors = sizeof(palette) / sizeof(palette[0]);
  auto pick = [&] { return palette[static_cast<int>(u01(rng) * kColors) % kColors]; };

  Image img(size, size, 3);
  const double* base = pick();
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(base[c]);

  // soft colored regions
  const int regions = 4 + static_cast<int>(u01(rng) * 4);
  for (int r = 0; r < regions; ++r) {
    const double* col = pick();
    const double cy = u01(rng) * size, cx = u01(rng) * size;
    const double sy = size * (0.08 + 0.2 * u01(rng)), sx = size * (0.08 + 0.2 * u01(rng));
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dy = (y - cy) / sy, dx = (x - cx) / sx;
        const double a = std::exp(-(dy * dy + dx * dx) * 0.5);
        for (int c = 0; c < 3; ++c) {
          float& p = img.at(y, x, c);
          p = static_cast<float>(p * (1 - a) + col[c] * a);
        }
      }
    }
  }
  // low-frequency shading
  const double fy = (1 + 2 * u01(rng)) * 2 * std::numbers::pi / size, fx = (1 + 2 * u01(rng)) * 2 * std::numbers::pi / size;
  const double ph = u01(rng) * 2 * std::numbers::pi;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double shade = 1.0 + 0.08 * std::sin(fy * y + fx * x + ph);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(img.at(y, x, c) * shade);
    }

  // curvilinear strokes: quadratic Bezier curves stamped with discs
  const int strokes = 6 + static_cast<int>(u01(rng) * 9);
  for (int s = 0; s < strokes; ++s) {
    const bool dark = u01(rng) < 0.7;
    const double col[3] = {dark ? 0.12 : 0.72, dark ? 0.10 : 0.18, dark ? 0.08 : 0.12};
    const double p0y = u01(rng) * size, p0x = u01(rng) * size;
    const double p1y = u01(rng) * size, p1x = u01(rng) * size;
    const double p2y = u01(rng) * size, p2x = u01(rng) * size;
    const double radius = 0.6 + 1.6 * u01(rng);
    const int samples = 4 * size;
    for (int i = 0; i <= samples; ++i) {
      const double t = static_cast<double>(i) / samples, a = (1 - t) * (1 - t), b = 2 * t * (1 - t), c2 = t * t;
      const double py = a * p0y + b * p1y + c2 * p2y, px = a * p0x + b * p1x + c2 * p2x;
      const int r = static_cast<int>(std::ceil(radius));
      for (int y = static_cast<int>(py) - r; y <= static_cast<int>(py) + r; ++y) {
        for (int x = static_cast<int>(px) - r; x <= static_cast<int>(px) + r; ++x) {
          if (y < 0 || x < 0 || y >= size || x >= size) continue;
          if ((y - py) * (y - py) + (x - px) * (x - px) > radius * radius) continue;
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(col[c]);
        }
      }
    }
  }

  // speckle
  std::normal_distribution<double> grain(0.0, 0.015);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double n = grain(rng);
      const bool dot = u01(rng) < 0.004;
      for (int c = 0; c < 3; ++c) {
        float& p = img.at(y, x, c);
        p = static_cast<float>(dot ? p * 0.55 : p + n);
      }
    }
  for (float& v : img.samples()) v = std::clamp(v, 0.04f, 0.96f);
  return img;
}

std::vector<SyntheticSample> make_synthetic_dataset(int count, int size, std::uint64_t seed, double coverage_lo,
                                                    double coverage_hi, const std::vector<double>& factors) {
  if (count < 0) throw ArgumentError("count must be >= 0");
  if (size < kInpaintTile || size % kInpaintTile != 0) {
    throw ArgumentError("synthetic tile size must be a multiple of 256");
  }
  if (!(coverage_lo <= coverage_hi)) throw ArgumentError("coverage band is empty");
  const auto families = all_families();
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
    SyntheticSample item;
    item.gt = synthetic_mural(size, s);
    for (double f : factors) item.dark.push_back(scale_brightness(item.gt, f));
    std::mt19937_64 rng(s ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> cov(coverage_lo, coverage_hi);
    item.mask_spec.family = families[static_cast<std::size_t>(i) % families.size()];
    item.mask_spec.coverage = cov(rng);
    item.mask_spec.size = size;
    item.mask_spec.seed = rng();
    item.mask = generate_mask(item.mask_spec);
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<Sample> to_samples(const std::vector<SyntheticSample>& data, int factor_index) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& d = data[i];
    if (factor_index < 0 || factor_index >= static_cast<int>(d.dark.size())) {
      throw ArgumentError("brightness variant index out of range");
    }
    Sample s;
    s.id = "syn" + std::to_string(i) + "_v" + std::to_string(factor_index);
    s.gt = d.gt;
    s.dark = d.dark[static_cast<std::size_t>(factor_index)];
    s.mask = d.mask;
    s.brightness = factor_index < static_cast<int>(kBrightnessFactors.size())
                       ? kBrightnessFactors[static_cast<std::size_t>(factor_index)]
                       : 0.0;
    out.push_back(std::move(s));
  }
  return out;
}

std::string to_json_line(const StepReport& r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["phase"] = phase_name(r.phase);
  j["lambda_r"] = r.lambda_r;
  j["lambda_e"] = r.lambda_e;
  j["lr"] = r.lr;
  j["batch"] = r.batch_size;
  nlohmann::json losses;
  if (r.phase == Phase::Enhance) {
    losses["enhancement"] = r.enhancement;
  } else {
    losses["recon_c"] = r.parts.recon_c;
    losses["gan_c"] = r.parts.gan_c;
    losses["disc"] = r.parts.disc;
    losses["local"] = r.parts.local;
    losses["global"] = r.parts.global;
    losses["restoration"] = r.restoration;
  }
  losses["total"] = r.objective;
  j["losses"] = losses;
  j["grad_norm"] = r.grad_norm;
  if (r.phase == Phase::Inpaint) j["disc_grad_norm"] = r.disc_grad_norm;
  return j.dump();
}

Tensor<float> stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw ArgumentError("empty batch");
  const int h = images[0]->height(), w = images[0]->width(), c = images[0]->channels();
  Tensor<float> out({static_cast<int>(images.size()), c, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.height() != h || img.width() != w || img.channels() != c) {
      throw ArgumentError("batch images differ in size");
    }
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(static_cast<int>(n), ch, y, x) = img.at(y, x, ch);
  }
  return out;
}

Tensor<float> stack_masks(const std::vector<const Mask*>& masks) {
  if (masks.empty()) throw ArgumentError("empty batch");
  const int h = masks[0]->height(), w = masks[0]->width();
  Tensor<float> out({static_cast<int>(masks.size()), 1, h, w});
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n]->height() != h || masks[n]->width() != w) throw ArgumentError("batch masks differ in size");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(static_cast<int>(n), 0, y, x) = masks[n]->at(y, x) ? 1.0f : 0.0f;
  }
  return out;
}

Params init_all_params(const TrainingConfig& cfg) {
  cfg.validate();
  Params p;
  init_enhance(p, cfg.enhance, mix_seed(cfg.seed, 1));
  init_inpaint(p, cfg.inpaint, mix_seed(cfg.seed, 2));
  return p;
}

InpaintForward evaluate_inpaint(const Params& params, const SpectralStates& spectral, const FeatureExtractor& fx,
                                const TrainingConfig& cfg, const InpaintBatch& batch) {
  const auto u = spectral_vectors<float>(spectral);
  Graph<float> g;
  Scope<float> gen(g, params, false);
  Scope<float> dsc(g, params, false);
  dsc.set_spectral(&u);
  const GeneratorVars v = build_generator(gen, dsc, fx, cfg, batch);
  InpaintForward out;
  out.coarse = g.value(v.mer_c);
  out.local = g.value(v.mer_l);
  out.global = g.value(v.mer_g);
  out.parts.recon_c = scalar(g, v.recon_c);
  out.parts.gan_c = scalar(g, v.gan_c);
  out.parts.local = scalar(g, v.local);
  out.parts.global = scalar(g, v.global);

  Graph<float> gd;
  Scope<float> d(gd, params, false);
  d.set_spectral(&u);
  Var real = disc_forward(d, gd.constant(batch.gt), cfg.inpaint);
  Var fake = disc_forward(d, gd.constant(out.coarse), cfg.inpaint);
  out.parts.disc = scalar(gd, disc_loss(gd, real, fake));
  return out;
}

Trainer::Trainer(TrainingConfig cfg, FeatureExtractor fx)
    : Trainer(cfg, std::move(fx), init_all_params(cfg)) {}

Trainer::Trainer(TrainingConfig cfg, FeatureExtractor fx, Params params)
    : cfg_(std::move(cfg)), fx_(std::move(fx)), params_(std::move(params)) {
  cfg_.validate();
  const InpaintConfig found = infer_inpaint_config(params_);
  if (found.width != cfg_.inpaint.width || found.netl_scale != cfg_.inpaint.netl_scale ||
      found.discriminator_width() != cfg_.inpaint.discriminator_width()) {
    throw ArgumentError("parameters do not match the configured inpaint widths");
  }
  if (enhance_channels(params_) != cfg_.enhance.channels) {
    throw ArgumentError("parameters do not match the configured enhancement width");
  }
  spectral_ = make_spectral_states(cfg_.inpaint, mix_seed(cfg_.seed, 3));
}

void Trainer::refresh_enh_cache() {
  const std::string h = params_hash(params_, {"enh."});
  if (h != enh_cache_hash_) {
    enh_cache_.clear();
    enh_cache_hash_ = h;
  }
}

const Tensor<float>& Trainer::enhanced_input(const Sample& s) {
  refresh_enh_cache();
  auto it = enh_cache_.find(s.id);
  if (it != enh_cache_.end() && !s.id.empty()) return it->second;
  Image y = s.dark;
  if (s.mask.height() != y.height() || s.mask.width() != y.width()) {
    throw ArgumentError("sample " + s.id + ": mask and image sizes differ");
  }
  for (int r = 0; r < y.height(); ++r)
    for (int c = 0; c < y.width(); ++c)
      if (s.mask.at(r, c))
        for (int ch = 0; ch < y.channels(); ++ch) y.at(r, c, ch) = 0.0f;
  Tensor<float> t = enhance_tensor(image_to_tensor<float>(y), params_, cfg_.enhance);
  return enh_cache_.insert_or_assign(s.id, std::move(t)).first->second;
}

InpaintBatch Trainer::inpaint_batch(const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw ArgumentError("empty batch");
  std::vector<const Image*> gts;
  std::vector<const Mask*> masks;
  for (const Sample* s : batch) {
    gts.push_back(&s->gt);
    masks.push_back(&s->mask);
  }
  InpaintBatch b;
  b.gt = stack_images(gts);
  b.mask = stack_masks(masks);
  b.input = Tensor<float>(b.gt.shape());
  const std::size_t per = b.gt.size() / batch.size();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Tensor<float>& e = enhanced_input(*batch[n]);
    if (e.size() != per) throw ArgumentError("sample " + batch[n]->id + ": size differs from the batch");
    std::copy(e.data(), e.data() + per, b.input.data() + n * per);
  }
  return b;
}

StepReport Trainer::train_step_enhance(const std::vector<const Sample*>& batch, double lr) {
  if (batch.empty()) throw ArgumentError("empty batch");
  std::vector<const Image*> darks;
  for (const Sample* s : batch) darks.push_back(&s->dark);
  const Tensor<float> y = stack_images(darks);

  Graph<float> g;
  Scope<float> scope(g, params_, true);
  const EnhanceVars<float> vars = enhance_graph(scope, g.constant(y), cfg_.enhance);
  Var loss = enhancement_loss(g, vars, cfg_.enhance);

  StepReport r;
  r.step = steps_;
  r.phase = Phase::Enhance;
  r.lambda_r = 0;
  r.lambda_e = 1;
  r.lr = lr;
  r.batch_size = static_cast<int>(batch.size());
  r.enhancement = scalar(g, loss);
  r.objective = mer_loss(0.0, r.enhancement, r.lambda_r, r.lambda_e);
  check_finite(r.enhancement, "enhancement loss", steps_);

  g.backward(loss);
  Params grads = scope.gradients();
  r.grad_norm = clip_global_norm(grads, cfg_.clip_norm);
  check_finite(r.grad_norm, "enhancement gradient norm", steps_);
  adam_update(params_, grads, enh_opt_, lr);
  ++steps_;
  return r;
}

StepReport Trainer::train_step_inpaint(const std::vector<const Sample*>& batch, double lr) {
  const InpaintBatch b = inpaint_batch(batch);
  update_spectral_states(params_, spectral_, cfg_.spectral_iterations);
  const auto u = spectral_vectors<float>(spectral_);

  StepReport r;
  r.step = steps_;
  r.phase = Phase::Inpaint;
  r.lambda_r = 1;
  r.lambda_e = 0;
  r.lr = lr;
  r.batch_size = static_cast<int>(batch.size());

  Tensor<float> fake;
  {
    Graph<float> g;
    Scope<float> gen(g, params_, true);
    Scope<float> dsc(g, params_, false);
    dsc.set_spectral(&u);
    const GeneratorVars v = build_generator(gen, dsc, fx_, cfg_, b);
    r.parts.recon_c = scalar(g, v.recon_c);
    r.parts.gan_c = scalar(g, v.gan_c);
    r.parts.local = scalar(g, v.local);
    r.parts.global = scalar(g, v.global);
    check_finite(scalar(g, v.objective), "generator loss", steps_);
    fake = g.value(v.mer_c);
    g.backward(v.objective);
    Params grads;
    for (auto& [name, t] : gen.gradients()) {
      if (name.rfind("netc.", 0) == 0 || name.rfind("netl.", 0) == 0 || name.rfind("netg.", 0) == 0) {
        grads.emplace(name, std::move(t));
      }
    }
    r.grad_norm = clip_global_norm(grads, cfg_.clip_norm);
    check_finite(r.grad_norm, "generator gradient norm", steps_);
    adam_update(params_, grads, gen_opt_, lr);
  }
  {
    Graph<float> g;
    Scope<float> d(g, params_, true);
    d.set_spectral(&u);
    Var real = disc_forward(d, g.constant(b.gt), cfg_.inpaint);
    Var fk = disc_forward(d, g.constant(std::move(fake)), cfg_.inpaint);
    Var loss = disc_loss(g, real, fk);
    r.parts.disc = scalar(g, loss);
    check_finite(r.parts.disc, "discriminator loss", steps_);
    g.backward(loss);
    Params grads = d.gradients();
    r.disc_grad_norm = clip_global_norm(grads, cfg_.clip_norm);
    check_finite(r.disc_grad_norm, "discriminator gradient norm", steps_);
    adam_update(params_, grads, disc_opt_, lr);
  }
  r.restoration = total_restoration_loss(r.parts);
  r.objective = mer_loss(r.restoration, 0.0, r.lambda_r, r.lambda_e);
  ++steps_;
  return r;
}

std::vector<StepReport> Trainer::train_epoch(const std::vector<Sample>& data, int epoch,
                                             const std::function<void(const StepReport&)>& on_step,
                                             int max_steps) {
  const double lr = lr_at(epoch, cfg_);
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(cfg_.seed, 1000 + static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<StepReport> reports;
  const auto batches = make_batches(partition_alternating(static_cast<int>(data.size()), cfg_), cfg_.batch);
  for (const auto& br : batches) {
    if (max_steps >= 0 && static_cast<int>(reports.size()) >= max_steps) break;
    std::vector<const Sample*> batch;
    for (int i = br.begin; i < br.end; ++i) batch.push_back(&data[static_cast<std::size_t>(order[i])]);
    StepReport r = br.phase == Phase::Enhance ? train_step_enhance(batch, lr) : train_step_inpaint(batch, lr);
    r.epoch = epoch;
    if (on_step) on_step(r);
    reports.push_back(r);
  }
  return reports;
}

}  // namespace mer
