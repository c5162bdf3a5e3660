#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mer/checkpoint.hpp"
#include "mer/error.hpp"
#include "mer/flawfind.hpp"
#include "mer/maskgen.hpp"
#include "mer/pipeline.hpp"
#include "mer/png.hpp"
#include "mer/service.hpp"
#include "mer/trainer.hpp"

namespace fs = std::filesystem;
using namespace mer;

namespace {

std::vector<double> parse_factors(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

FeatureExtractor extractor(const std::string& vgg) {
  if (vgg.empty()) {
    std::cerr << "note: no --vgg weights given; using the seeded test-mode feature extractor\n";
    return FeatureExtractor::test_mode();
  }
  return FeatureExtractor::load(vgg);
}

int report_failures(const std::vector<FileFailure>& failures) {
  for (const auto& f : failures) std::cerr << "failed: " << f.input.string() << ": " << f.message << "\n";
  return failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-light mural enhancement and inpainting"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Darken and tile a directory of PNG images into a dataset");
  std::string prep_in, prep_out, prep_factors = "0.55,0.37,0.12";
  int prep_tile = 256;
  prepare->add_option("input", prep_in, "Directory of source PNG images")->required();
  prepare->add_option("-o,--output", prep_out, "Dataset directory")->required();
  prepare->add_option("--factors", prep_factors, "Comma-separated brightness factors")->capture_default_str();
  prepare->add_option("--tile", prep_tile, "Tile size")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Alternating two-phase training");
  std::string train_cfg, train_data, train_out, train_log, train_init, train_vgg;
  std::vector<std::string> train_set;
  int synthetic = 0, variant = -1, start_epoch = 0, epochs = -1, max_steps = -1;
  train->add_option("--config", train_cfg, "key = value configuration file");
  train->add_option("--set", train_set, "Extra key=value overrides");
  auto* data_opt = train->add_option("--data", train_data, "Dataset directory made by `prepare`");
  auto* syn_opt = train->add_option("--synthetic", synthetic, "Train on N procedural mural tiles instead");
  data_opt->excludes(syn_opt);
  train->add_option("--variant", variant, "Synthetic brightness variant 0/1/2 (0.55/0.37/0.12); -1 = all")
      ->capture_default_str();
  train->add_option("--init", train_init, "Start from this checkpoint");
  train->add_option("--start-epoch", start_epoch, "First epoch index")->capture_default_str();
  train->add_option("--epochs", epochs, "Number of epochs to run (default: through the schedule)");
  train->add_option("--max-steps", max_steps, "Stop after this many steps in total");
  train->add_option("-o,--out", train_out, "Checkpoint to write")->required();
  train->add_option("--log", train_log, "JSON-lines training log (default: stdout)");
  train->add_option("--vgg", train_vgg, "VGG-16 feature weights (checkpoint format, vgg.* tensors)");

  // restore
  auto* restore = app.add_subcommand("restore", "Enhance and inpaint images");
  PipelineRequest req;
  std::vector<std::string> restore_inputs;
  std::string restore_mask;
  restore->add_option("inputs", restore_inputs, "Input PNG files")->required();
  restore->add_option("-c,--checkpoint", req.checkpoint, "Model checkpoint")->required();
  restore->add_option("-o,--output", req.output_dir, "Output directory")->required();
  auto* mask_opt = restore->add_option("--mask", restore_mask, "Mask PNG, or a directory of <stem>.png masks");
  auto* auto_flag = restore->add_flag("--auto-mask", req.auto_mask, "Detect defects per tile");
  mask_opt->excludes(auto_flag);
  restore->add_option("--lambda-g", req.flaw.lambda_g, "Gradient outlier factor")->capture_default_str();
  restore->add_option("--lambda-p", req.flaw.lambda_p, "Pixel outlier factor")->capture_default_str();
  restore->add_flag("--stages", req.emit_stages, "Also write per-stage PNGs");
  restore->add_option("--workers", req.workers, "Tile worker threads")->capture_default_str();
  restore->add_option("--rounds", req.enhance.rounds, "Enhancement rounds T")->capture_default_str();

  // enhance
  auto* enhance = app.add_subcommand("enhance", "Low-light enhancement only");
  std::vector<std::string> enh_inputs;
  std::string enh_ckpt, enh_out;
  EnhanceHyper enh_hyper;
  enhance->add_option("inputs", enh_inputs, "Input PNG files")->required();
  enhance->add_option("-c,--checkpoint", enh_ckpt, "Model checkpoint")->required();
  enhance->add_option("-o,--output", enh_out, "Output directory")->required();
  enhance->add_option("--rounds", enh_hyper.rounds, "Enhancement rounds T")->capture_default_str();

  // find-flaws
  auto* flaws = app.add_subcommand("find-flaws", "Detect defect regions");
  std::string flaw_in, flaw_out;
  FlawParams flaw_params;
  flaws->add_option("input", flaw_in, "Input PNG")->required();
  flaws->add_option("-o,--output", flaw_out, "Mask PNG to write")->required();
  flaws->add_option("--lambda-g", flaw_params.lambda_g, "Gradient outlier factor")->capture_default_str();
  flaws->add_option("--lambda-p", flaw_params.lambda_p, "Pixel outlier factor")->capture_default_str();
  flaws->add_option("--closing", flaw_params.closing_radius, "Closing radius")->capture_default_str();

  // gen-mask
  auto* gen = app.add_subcommand("gen-mask", "Generate a random defect mask");
  MaskSpec mspec;
  std::string family = "dusk", gen_out;
  gen->add_option("--family", family, "dusk, jelly, droplet, block or line")->capture_default_str();
  gen->add_option("--coverage", mspec.coverage, "Target coverage in [0.05, 0.5]")->capture_default_str();
  gen->add_option("--size", mspec.size, "Side length")->capture_default_str();
  gen->add_option("--seed", mspec.seed, "Seed")->capture_default_str();
  gen->add_option("-o,--output", gen_out, "Mask PNG to write")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "PSNR / SSIM / perc_dist over a prepared dataset");
  std::string eval_data, eval_ckpt, eval_csv, eval_json, eval_vgg;
  std::uint64_t eval_seed = 1;
  int eval_limit = -1;
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("-c,--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--csv", eval_csv, "Per-image CSV")->required();
  eval->add_option("--json", eval_json, "Aggregate JSON")->required();
  eval->add_option("--vgg", eval_vgg, "VGG-16 feature weights");
  eval->add_option("--seed", eval_seed, "Mask seed")->capture_default_str();
  eval->add_option("--limit", eval_limit, "Only the first N rows");

  // bench
  auto* bench = app.add_subcommand("bench", "Per-tile timing by brightness and mask band");
  std::string bench_data, bench_ckpt, bench_json;
  int bench_limit = -1;
  bench->add_option("--data", bench_data, "Dataset directory")->required();
  bench->add_option("-c,--checkpoint", bench_ckpt, "Model checkpoint")->required();
  bench->add_option("--json", bench_json, "Also write the report as JSON");
  bench->add_option("--limit", bench_limit, "Only the first N rows");

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP restoration service");
  std::string srv_store, srv_ckpt, srv_host = "127.0.0.1";
  int srv_port = 8080, srv_workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  srv->add_option("--store", srv_store, "Store directory")->required();
  srv->add_option("-c,--checkpoint", srv_ckpt, "Model checkpoint")->required();
  srv->add_option("--host", srv_host, "Bind address")->capture_default_str();
  srv->add_option("--port", srv_port, "Port")->capture_default_str();
  srv->add_option("--workers", srv_workers, "Job workers")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) {
      const auto rep = run_prepare(prep_in, prep_out, parse_factors(prep_factors), prep_tile);
      std::cout << rep.images << " images, " << rep.gt_tiles << " gt tiles, " << rep.dark_tiles
                << " darkened tiles\n";
      return report_failures(rep.failures);
    }
    if (*train) {
      std::string text;
      if (!train_cfg.empty()) {
        std::ifstream f(train_cfg);
        if (!f) throw ArgumentError("cannot open config " + train_cfg);
        std::ostringstream ss;
        ss << f.rdbuf();
        text = ss.str();
      }
      for (const auto& kv : train_set) text += "\n" + kv;
      const TrainingConfig cfg = parse_training_config(text);
      std::vector<Sample> data;
      if (!train_data.empty()) {
        data = load_training_samples(train_data, cfg.seed);
      } else if (synthetic > 0) {
        const auto syn = make_synthetic_dataset(synthetic, 256, cfg.seed);
        for (int v = 0; v < 3; ++v) {
          if (variant >= 0 && v != variant) continue;
          auto part = to_samples(syn, v);
          data.insert(data.end(), part.begin(), part.end());
        }
      }
      Trainer trainer = train_init.empty() ? Trainer(cfg, extractor(train_vgg))
                                           : Trainer(cfg, extractor(train_vgg), load_checkpoint(train_init));
      std::ofstream log_file;
      if (!train_log.empty()) log_file.open(train_log);
      std::ostream& log = train_log.empty() ? std::cout : log_file;
      const int last = epochs < 0 ? cfg.total_epochs() : std::min(cfg.total_epochs(), start_epoch + epochs);
      int steps = 0;
      for (int e = start_epoch; e < last && !data.empty(); ++e) {
        if (max_steps >= 0 && steps >= max_steps) break;
        const auto reports = trainer.train_epoch(
            data, e, [&](const StepReport& r) { log << to_json_line(r) << std::endl; },
            max_steps < 0 ? -1 : max_steps - steps);
        steps += static_cast<int>(reports.size());
        save_checkpoint(train_out, trainer.params());
      }
      save_checkpoint(train_out, trainer.params());
      std::cerr << steps << " steps, checkpoint " << train_out << "\n";
      return 0;
    }
    if (*restore) {
      for (const auto& s : restore_inputs) req.inputs.emplace_back(s);
      if (!restore_mask.empty()) req.mask = restore_mask;
      const auto rep = run_restore(req);
      for (const auto& p : rep.written) std::cout << p.string() << "\n";
      return report_failures(rep.failures);
    }
    if (*enhance) {
      const Model model = Model::load(enh_ckpt, enh_hyper);
      fs::create_directories(enh_out);
      std::vector<FileFailure> failures;
      for (const auto& in : enh_inputs) {
        try {
          const RestoreResult r = restore_image(model, load_image(in), RestoreOptions{});
          const fs::path p = fs::path(enh_out) / (fs::path(in).stem().string() + ".enhanced.png");
          save_image(p, r.enhanced);
          std::cout << p.string() << "\n";
        } catch (const LoadError&) {
          throw;
        } catch (const std::exception& e) {
          failures.push_back({in, e.what()});
        }
      }
      return report_failures(failures);
    }
    if (*flaws) {
      const Image img = ensure_rgb(load_image(flaw_in));
      ThresholdStats st;
      const Mask m = detect_flaws(img, flaw_params, &st);
      save_mask(flaw_out, m);
      std::cout << "G_th " << st.g_th << "  boundary " << st.boundary_pixels << "  flagged " << m.count() << " ("
                << coverage_of(m) * 100 << "%)\n";
      return 0;
    }
    if (*gen) {
      mspec.family = parse_family(family);
      const Mask m = generate_mask(mspec);
      save_mask(gen_out, m);
      std::cout << "coverage " << coverage_of(m) << "\n";
      return 0;
    }
    if (*eval) {
      const Model model = Model::load(eval_ckpt);
      const auto rep = run_evaluate(eval_data, model, extractor(eval_vgg), eval_seed, eval_limit);
      std::ofstream(eval_csv) << rep.csv();
      std::ofstream(eval_json) << rep.aggregate_json() << "\n";
      std::cout << rep.rows.size() << " rows evaluated\n";
      return 0;
    }
    if (*bench) {
      const Model model = Model::load(bench_ckpt);
      const auto rep = run_benchmark(bench_data, model, 1, bench_limit);
      for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << rep.table();
      if (!bench_json.empty()) std::ofstream(bench_json) << rep.json() << "\n";
      return 0;
    }
    if (*srv) {
      auto model = std::make_shared<const Model>(Model::load(srv_ckpt));
      RestorationService service(srv_store, model, srv_workers);
      std::cerr << "listening on " << srv_host << ":" << srv_port << "\n";
      serve(service, srv_host, srv_port);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
