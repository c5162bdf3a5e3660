#include "mer/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mer/checkpoint.hpp"
#include "mer/error.hpp"
#include "mer/maskgen.hpp"
#include "mer/metrics.hpp"
#include "mer/png.hpp"

namespace fs = std::filesystem;

namespace mer {

namespace {

struct TileOutput {
  Image enhanced, coarse, local, global;
  Mask mask;
};

TileOutput restore_tile(const Model& model, const Image& tile, const Mask* mask, const RestoreOptions& opts) {
  TileOutput out;
  out.enhanced = enhance_image(tile, model.params, model.enhance);
  if (opts.mode == MaskMode::None) return out;
  out.mask = opts.mode == MaskMode::Auto ? detect_flaws(tile, opts.flaw) : *mask;
  const StageImages st = inpaint_stages(model.params, out.enhanced, out.mask);
  out.coarse = st.coarse;
  out.local = st.local;
  out.global = st.global;
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

std::string factor_dir(double f) {
  std::ostringstream os;
  os << std::setw(3) << std::setfill('0') << static_cast<int>(std::lround(f * 100));
  return os.str();
}

std::string fmt_num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json summary_json(const std::vector<double>& values) {
  nlohmann::json j;
  std::vector<double> finite;
  for (double v : values)
    if (std::isfinite(v)) finite.push_back(v);
  j["count"] = values.size();
  if (finite.size() != values.size()) j["non_finite"] = values.size() - finite.size();
  if (finite.empty()) return j;
  const Summary s = summarize(finite);
  j["mean"] = s.mean;
  j["min"] = s.min;
  j["q1"] = s.q1;
  j["median"] = s.median;
  j["q3"] = s.q3;
  j["max"] = s.max;
  return j;
}

std::uint64_t row_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x6d61736bu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

std::vector<std::string> restore_tensor_names() {
  std::vector<std::string> names;
  EnhanceHyper eh;
  for (const char* p : {"enh.h", "enh.k"})
    for (const auto& [n, s] : parameter_shapes(enhance_network(p, eh.channels))) names.push_back(n);
  InpaintConfig cfg;
  for (const auto& [n, s] : unet_parameter_shapes("netc", 4, cfg.width, false)) names.push_back(n);
  for (const auto& [n, s] : parameter_shapes(netl_network(cfg))) names.push_back(n);
  for (const auto& [n, s] : unet_parameter_shapes("netg", 3, cfg.width, true)) names.push_back(n);
  names.push_back("meta.netl.scale");
  return names;
}

Model Model::from_params(Params params, EnhanceHyper hyper) {
  require_tensors(params, restore_tensor_names());
  Model m;
  hyper.channels = enhance_channels(params);
  hyper.validate();
  m.enhance = hyper;
  m.inpaint = infer_inpaint_config(params);
  m.params = std::move(params);
  return m;
}

Model Model::load(const fs::path& checkpoint, EnhanceHyper hyper) {
  return from_params(load_checkpoint(checkpoint), hyper);
}

RestoreResult restore_image(const Model& model, const Image& input_any, const RestoreOptions& opts, const Mask* mask,
                            const std::function<void(int, int)>& progress) {
  if (opts.tile < 1 || opts.tile % kInpaintTile != 0) throw ArgumentError("tile size must be a multiple of 256");
  const Image input = ensure_rgb(input_any);
  if (opts.mode == MaskMode::Given) {
    if (!mask) throw ArgumentError("mask mode needs a mask");
    if (mask->height() != input.height() || mask->width() != input.width()) {
      throw ArgumentError("mask is " + std::to_string(mask->width()) + "x" + std::to_string(mask->height()) +
                          ", image is " + std::to_string(input.width()) + "x" + std::to_string(input.height()));
    }
  }
  TileGrid grid;
  const std::vector<Image> tiles = split_tiles(input, opts.tile, &grid);
  std::vector<Mask> mask_tiles;
  if (opts.mode == MaskMode::Given) mask_tiles = split_tiles(*mask, opts.tile, nullptr);

  std::vector<TileOutput> outs(tiles.size());
  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0};
  std::mutex progress_mu;
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < tiles.size(); i = next++) {
      try {
        outs[i] = restore_tile(model, tiles[i], mask_tiles.empty() ? nullptr : &mask_tiles[i], opts);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = tiles.size();
        return;
      }
      const int d = ++done;
      if (progress) {
        std::lock_guard lock(progress_mu);
        progress(d, static_cast<int>(tiles.size()));
      }
    }
  };
  const int workers = std::clamp(opts.workers, 1, static_cast<int>(tiles.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  auto stitch = [&](Image TileOutput::*field) {
    std::vector<Image> parts;
    parts.reserve(outs.size());
    for (auto& o : outs) parts.push_back(std::move(o.*field));
    return stitch_tiles(grid, parts);
  };
  RestoreResult r;
  r.enhanced = stitch(&TileOutput::enhanced);
  if (opts.mode == MaskMode::None) {
    r.final = r.enhanced;
    r.mask = Mask(input.height(), input.width());
    return r;
  }
  std::vector<Mask> masks;
  for (auto& o : outs) masks.push_back(std::move(o.mask));
  r.mask = stitch_tiles(grid, masks);
  r.coarse = stitch(&TileOutput::coarse);
  r.local = stitch(&TileOutput::local);
  r.global = stitch(&TileOutput::global);
  r.final = r.global;
  return r;
}

void PipelineRequest::validate() const {
  if (inputs.empty()) throw ArgumentError("no input images");
  if (mask && auto_mask) throw ArgumentError("choose either a mask or auto-mask, not both");
  if (mask && inputs.size() > 1 && !fs::is_directory(*mask)) {
    throw ArgumentError("several inputs need a mask directory");
  }
  if (workers < 1) throw ArgumentError("workers must be >= 1");
  flaw.validate();
}

RestoreReport run_restore(const PipelineRequest& req) {
  req.validate();
  const Model model = Model::load(req.checkpoint, req.enhance);
  fs::create_directories(req.output_dir);
  RestoreReport report;
  RestoreOptions opts;
  opts.mode = req.auto_mask ? MaskMode::Auto : (req.mask ? MaskMode::Given : MaskMode::None);
  opts.flaw = req.flaw;
  opts.workers = req.workers;
  for (const auto& in : req.inputs) {
    try {
      const Image img = load_image(in);
      Mask mask;
      if (opts.mode == MaskMode::Given) {
        const fs::path mp = fs::is_directory(*req.mask) ? *req.mask / (in.stem().string() + ".png") : *req.mask;
        mask = load_mask(mp);
      }
      const RestoreResult r = restore_image(model, img, opts, opts.mode == MaskMode::Given ? &mask : nullptr);
      const std::string stem = in.stem().string();
      auto put = [&](const std::string& suffix, const Image& im) {
        const fs::path p = req.output_dir / (stem + suffix);
        save_image(p, im);
        report.written.push_back(p);
      };
      put(".final.png", r.final);
      if (req.emit_stages) {
        put(".enhanced.png", r.enhanced);
        if (opts.mode != MaskMode::None) {
          put(".coarse.png", r.coarse);
          put(".local.png", r.local);
          put(".global.png", r.global);
          const fs::path p = req.output_dir / (stem + ".mask.png");
          save_mask(p, r.mask);
          report.written.push_back(p);
        }
      }
    } catch (const LoadError&) {
      throw;
    } catch (const std::exception& e) {
      report.failures.push_back({in, e.what()});
    }
  }
  return report;
}

void write_manifest(const fs::path& dataset_dir, const std::vector<ManifestRow>& rows) {
  std::ofstream f(dataset_dir / "manifest.csv", std::ios::binary);
  if (!f) throw ArgumentError("cannot write manifest in " + dataset_dir.string());
  f << "gt,dark,brightness\n";
  for (const auto& r : rows) f << csv_field(r.gt) << ',' << csv_field(r.dark) << ',' << fmt_num(r.brightness) << '\n';
}

std::vector<ManifestRow> read_manifest(const fs::path& dataset_dir) {
  std::ifstream f(dataset_dir / "manifest.csv");
  if (!f) throw ArgumentError("no manifest.csv in " + dataset_dir.string());
  std::vector<ManifestRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const auto cells = csv_split(line);
    if (cells.size() != 3) throw ArgumentError("manifest line " + std::to_string(lineno) + ": expected 3 fields");
    ManifestRow r{cells[0], cells[1], 0.0};
    try {
      r.brightness = std::stod(cells[2]);
    } catch (const std::exception&) {
      throw ArgumentError("manifest line " + std::to_string(lineno) + ": bad brightness '" + cells[2] + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

PrepareReport run_prepare(const fs::path& input_dir, const fs::path& out_dir, const std::vector<double>& factors,
                          int tile) {
  if (!fs::is_directory(input_dir)) throw ArgumentError("input directory not found: " + input_dir.string());
  if (factors.empty()) throw ArgumentError("no brightness factors");
  for (double f : factors)
    if (!(f > 0.0 && f <= 1.0)) throw ArgumentError("brightness factors must be in (0, 1]");
  const auto files = list_pngs(input_dir);
  if (files.empty()) throw ArgumentError("no PNG images in " + input_dir.string());
  fs::create_directories(out_dir / "gt");
  for (double f : factors) fs::create_directories(out_dir / "dark" / factor_dir(f));

  PrepareReport rep;
  std::vector<ManifestRow> rows;
  for (const auto& file : files) {
    Image img;
    try {
      img = ensure_rgb(load_image(file));
    } catch (const std::exception& e) {
      rep.failures.push_back({file, e.what()});
      continue;
    }
    ++rep.images;
    TileGrid grid;
    const auto gt_tiles = split_tiles(img, tile, &grid);
    const std::string stem = file.stem().string();
    for (int r = 0; r < grid.tiles_y; ++r) {
      for (int c = 0; c < grid.tiles_x; ++c) {
        const std::string name = stem + "_r" + std::to_string(r) + "_c" + std::to_string(c) + ".png";
        const Image& t = gt_tiles[static_cast<std::size_t>(r * grid.tiles_x + c)];
        save_image(out_dir / "gt" / name, t);
        ++rep.gt_tiles;
        for (double f : factors) {
          const std::string rel = "dark/" + factor_dir(f) + "/" + name;
          save_image(out_dir / rel, scale_brightness(t, f));
          rows.push_back({"gt/" + name, rel, f});
          ++rep.dark_tiles;
        }
      }
    }
  }
  write_manifest(out_dir, rows);
  return rep;
}

MaskSpec evaluation_mask_spec(std::size_t index, int size, std::uint64_t seed) {
  const auto families = all_families();
  std::mt19937_64 rng(row_seed(seed, index));
  MaskSpec spec;
  spec.family = families[index % families.size()];
  spec.coverage = std::uniform_real_distribution<double>(0.06, 0.49)(rng);
  spec.size = size;
  spec.seed = rng();
  return spec;
}

std::vector<Sample> load_training_samples(const fs::path& dataset_dir, std::uint64_t seed, int limit) {
  const auto rows = read_manifest(dataset_dir);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (limit >= 0 && static_cast<int>(i) >= limit) break;
    Sample s;
    s.id = rows[i].dark;
    s.gt = ensure_rgb(load_image(dataset_dir / rows[i].gt));
    s.dark = ensure_rgb(load_image(dataset_dir / rows[i].dark));
    if (!s.gt.same_shape(s.dark) || s.gt.height() != kInpaintTile || s.gt.width() != kInpaintTile) {
      throw ArgumentError("training tiles must be 256x256: " + rows[i].dark);
    }
    s.mask = generate_mask(evaluation_mask_spec(i, kInpaintTile, seed));
    s.brightness = rows[i].brightness;
    out.push_back(std::move(s));
  }
  return out;
}

std::string EvalReport::csv() const {
  std::ostringstream os;
  os << "id,mask_bucket,brightness,psnr,ssim,perc_dist\n";
  for (const auto& r : rows) {
    os << csv_field(r.id) << ',' << r.bucket << ',' << fmt_num(r.brightness) << ',' << fmt_num(r.psnr) << ','
       << fmt_num(r.ssim) << ',' << fmt_num(r.perc_dist) << '\n';
  }
  return os.str();
}

std::string EvalReport::aggregate_json() const {
  auto block = [](const std::vector<const EvalRow*>& rs) {
    std::vector<double> p, s, d;
    for (const auto* r : rs) {
      p.push_back(r->psnr);
      s.push_back(r->ssim);
      d.push_back(r->perc_dist);
    }
    nlohmann::json j;
    j["psnr"] = summary_json(p);
    j["ssim"] = summary_json(s);
    j["perc_dist"] = summary_json(d);
    return j;
  };
  std::vector<const EvalRow*> all;
  std::map<std::pair<double, std::string>, std::vector<const EvalRow*>> groups;
  for (const auto& r : rows) {
    all.push_back(&r);
    groups[{r.brightness, r.bucket}].push_back(&r);
  }
  nlohmann::json j;
  j["note"] = "perc_dist is a feature-distance proxy and is not comparable to LPIPS";
  j["overall"] = block(all);
  j["groups"] = nlohmann::json::array();
  for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
    nlohmann::json g = block(it->second);
    g["brightness"] = it->first.first;
    g["mask_bucket"] = it->first.second;
    j["groups"].push_back(g);
  }
  return j.dump(2);
}

EvalReport run_evaluate(const fs::path& dataset_dir, const Model& model, const FeatureExtractor& fx,
                        std::uint64_t seed, int limit) {
  const auto rows = read_manifest(dataset_dir);
  EvalReport rep;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (limit >= 0 && static_cast<int>(i) >= limit) break;
    const auto& row = rows[i];
    const Image gt = ensure_rgb(load_image(dataset_dir / row.gt));
    const Image dark = ensure_rgb(load_image(dataset_dir / row.dark));
    if (!gt.same_shape(dark)) throw ArgumentError("manifest row " + std::to_string(i + 1) + ": size mismatch");
    if (gt.height() != gt.width()) throw ArgumentError("evaluation tiles must be square");
    const Mask mask = generate_mask(evaluation_mask_spec(i, gt.height(), seed));
    RestoreOptions opts;
    opts.mode = MaskMode::Given;
    const Image out = restore_image(model, dark, opts, &mask).final;
    EvalRow r;
    r.id = row.dark;
    r.bucket = coverage_band(coverage_of(mask));
    r.brightness = row.brightness;
    r.psnr = psnr(out, gt);
    r.ssim = ssim(out, gt);
    r.perc_dist = perc_dist(fx, out, gt);
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

std::string BenchReport::table() const {
  std::ostringstream os;
  os << "brightness  mask   tiles   mean_ms    p50_ms    p95_ms\n";
  for (const auto& b : buckets) {
    const Summary s = summarize(b.seconds);
    os << std::fixed << std::setprecision(0) << std::setw(9) << b.brightness * 100 << "%  " << b.band << std::setw(8)
       << b.seconds.size() << std::setprecision(1) << std::setw(10) << s.mean * 1e3 << std::setw(10)
       << quantile(b.seconds, 0.5) * 1e3 << std::setw(10) << quantile(b.seconds, 0.95) * 1e3 << '\n';
  }
  return os.str();
}

std::string BenchReport::json() const {
  nlohmann::json j;
  j["buckets"] = nlohmann::json::array();
  for (const auto& b : buckets) {
    j["buckets"].push_back({{"brightness", b.brightness},
                            {"mask_band", b.band},
                            {"tiles", b.seconds.size()},
                            {"mean_s", summarize(b.seconds).mean},
                            {"p50_s", quantile(b.seconds, 0.5)},
                            {"p95_s", quantile(b.seconds, 0.95)}});
  }
  j["warnings"] = warnings;
  return j.dump(2);
}

BenchReport run_benchmark(const fs::path& dataset_dir, const Model& model, std::uint64_t seed, int limit) {
  const auto rows = read_manifest(dataset_dir);
  const std::vector<double> levels = {0.55, 0.37, 0.12};
  const std::vector<std::string> bands = {"05-20", "20-35", "35-50"};
  std::map<std::pair<int, std::string>, std::vector<double>> timings;
  BenchReport rep;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (limit >= 0 && static_cast<int>(i) >= limit) break;
    const Image dark = ensure_rgb(load_image(dataset_dir / rows[i].dark));
    if (dark.height() != kInpaintTile || dark.width() != kInpaintTile) {
      rep.warnings.push_back("skipped " + rows[i].dark + ": not a 256x256 tile");
      continue;
    }
    const Mask mask = generate_mask(evaluation_mask_spec(i, kInpaintTile, seed));
    RestoreOptions opts;
    opts.mode = MaskMode::Given;
    const auto t0 = std::chrono::steady_clock::now();
    (void)restore_image(model, dark, opts, &mask);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto lv = std::find_if(levels.begin(), levels.end(), [&](double l) { return std::abs(l - rows[i].brightness) < 1e-6; });
    if (lv == levels.end()) {
      rep.warnings.push_back("skipped " + rows[i].dark + ": brightness outside the report layout");
      continue;
    }
    timings[{static_cast<int>(lv - levels.begin()), coverage_band(coverage_of(mask))}].push_back(dt);
  }
  for (std::size_t l = 0; l < levels.size(); ++l) {
    for (const auto& band : bands) {
      auto it = timings.find({static_cast<int>(l), band});
      if (it == timings.end()) {
        rep.warnings.push_back("empty bucket " + factor_dir(levels[l]) + "% / " + band + " omitted");
        continue;
      }
      rep.buckets.push_back({levels[l], band, it->second});
    }
  }
  return rep;
}

}  // namespace mer
