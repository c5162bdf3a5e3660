#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mer/enhance.hpp"
#include "mer/flawfind.hpp"
#include "mer/inpaint.hpp"
#include "mer/losses.hpp"
#include "mer/maskgen.hpp"
#include "mer/trainer.hpp"

namespace mer {

// Trained weights needed for restoration (enh.*, netc.*, netl.*, netg.*).
struct Model {
  Params params;
  EnhanceHyper enhance;
  InpaintConfig inpaint;

  // Throws LoadError naming every missing tensor.
  static Model from_params(Params params, EnhanceHyper hyper = {});
  static Model load(const std::filesystem::path& checkpoint, EnhanceHyper hyper = {});
};

// Tensor names a checkpoint must carry for restoration.
std::vector<std::string> restore_tensor_names();

enum class MaskMode { None, Given, Auto };

struct RestoreOptions {
  MaskMode mode = MaskMode::None;
  FlawParams flaw;  // Auto
  int tile = kInpaintTile;
  int workers = 1;
};

struct RestoreResult {
  Image enhanced;
  Image coarse, local, global;  // empty for MaskMode::None
  Image final;
  Mask mask;  // stitched mask actually used
};

// tile -> enhance -> (mask per tile) -> coarse -> merge -> local -> merge -> global -> merge -> stitch.
// `mask` must match the image size for MaskMode::Given. Auto masks are
// detected on each input tile. `progress` receives completed / total tiles.
RestoreResult restore_image(const Model& model, const Image& input, const RestoreOptions& opts,
                            const Mask* mask = nullptr,
                            const std::function<void(int, int)>& progress = {});

struct PipelineRequest {
  std::vector<std::filesystem::path> inputs;
  std::optional<std::filesystem::path> mask;  // with one input, or a directory of <stem>.png masks
  bool auto_mask = false;
  FlawParams flaw;
  std::filesystem::path checkpoint;
  std::filesystem::path output_dir;
  bool emit_stages = false;
  int workers = 1;
  EnhanceHyper enhance;

  void validate() const;
};

struct FileFailure {
  std::filesystem::path input;
  std::string message;
};

struct RestoreReport {
  std::vector<std::filesystem::path> written;
  std::vector<FileFailure> failures;
};

// Writes <stem>.final.png and, with emit_stages, <stem>.enhanced/.coarse/
// .local/.global/.mask.png. Model problems throw; per-file problems are
// collected and the batch continues.
RestoreReport run_restore(const PipelineRequest& req);

struct ManifestRow {
  std::string gt;    // relative to the dataset directory
  std::string dark;
  double brightness = 1.0;
};

// gt/<stem>_r<row>_c<col>.png, dark/<pct>/<stem>_r<row>_c<col>.png and manifest.csv.
struct PrepareReport {
  int images = 0;
  int gt_tiles = 0;
  int dark_tiles = 0;
  std::vector<FileFailure> failures;
};
PrepareReport run_prepare(const std::filesystem::path& input_dir, const std::filesystem::path& out_dir,
                          const std::vector<double>& factors = {0.55, 0.37, 0.12}, int tile = kInpaintTile);

std::vector<ManifestRow> read_manifest(const std::filesystem::path& dataset_dir);
void write_manifest(const std::filesystem::path& dataset_dir, const std::vector<ManifestRow>& rows);

// Deterministic evaluation mask for manifest row `index`: families cycle,
// coverage spread over [0.05, 0.50].
MaskSpec evaluation_mask_spec(std::size_t index, int size, std::uint64_t seed);

// Manifest rows as training samples (256 tiles) with seeded masks drawn like
// evaluation_mask_spec from the `seed` stream.
std::vector<Sample> load_training_samples(const std::filesystem::path& dataset_dir, std::uint64_t seed,
                                          int limit = -1);

struct EvalRow {
  std::string id;
  std::string bucket;
  double brightness = 1.0;
  double psnr = 0.0, ssim = 0.0, perc_dist = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string csv() const;
  // Mean and quartiles overall and per (brightness, bucket).
  std::string aggregate_json() const;
};

EvalReport run_evaluate(const std::filesystem::path& dataset_dir, const Model& model, const FeatureExtractor& fx,
                        std::uint64_t seed = 1, int limit = -1);

struct BenchBucket {
  double brightness = 1.0;
  std::string band;
  std::vector<double> seconds;
};

struct BenchReport {
  std::vector<BenchBucket> buckets;
  std::vector<std::string> warnings;
  std::string table() const;  // mean, p50, p95 per bucket
  std::string json() const;
};

// Per-tile wall clock of enhance + three inpaint stages, bucketed by
// brightness {0.55, 0.37, 0.12} and mask band.
BenchReport run_benchmark(const std::filesystem::path& dataset_dir, const Model& model, std::uint64_t seed = 1,
                          int limit = -1);

}  // namespace mer
