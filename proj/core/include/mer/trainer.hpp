#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mer/adam.hpp"
#include "mer/enhance.hpp"
#include "mer/inpaint.hpp"
#include "mer/losses.hpp"
#include "mer/maskgen.hpp"

namespace mer {

struct TrainingConfig {
  int batch = 6;
  double lr0 = 1e-4;
  int epochs_flat = 100;
  int epochs_decay = 100;
  int subset = 60;
  int enh_quota = 6;
  double clip_norm = 10.0;
  int spectral_iterations = 1;
  EnhanceHyper enhance;
  LossWeights weights;
  InpaintConfig inpaint;
  std::uint64_t seed = 1;

  int total_epochs() const { return epochs_flat + epochs_decay; }
  void validate() const;
};

// `key = value` lines, '#' starts a comment. Unknown keys are rejected.
TrainingConfig parse_training_config(const std::string& text);
TrainingConfig load_training_config(const std::filesystem::path& path);
std::string format_training_config(const TrainingConfig& cfg);

// lr0 for epoch < epochs_flat, then linear to zero at total_epochs.
double lr_at(int epoch, const TrainingConfig& cfg);

enum class Phase { Enhance, Inpaint };
const char* phase_name(Phase p);

struct PhaseRange {
  int begin = 0;  // sample positions [begin, end)
  int end = 0;
  Phase phase = Phase::Inpaint;
  bool operator==(const PhaseRange&) const = default;
};
using PhasePlan = std::vector<PhaseRange>;

// Consecutive `subset` blocks; the first enh_quota positions of a block are
// ENHANCE. A trailing block of b samples gets ceil(b * enh_quota / subset).
PhasePlan partition_alternating(int n_samples, const TrainingConfig& cfg);
Phase phase_of(const PhasePlan& plan, int position);

struct BatchRange {
  int begin = 0;
  int end = 0;
  Phase phase = Phase::Inpaint;
};
// Batches never straddle a phase boundary; the last batch of a range may be short.
std::vector<BatchRange> make_batches(const PhasePlan& plan, int batch);

struct Sample {
  std::string id;
  Image gt;
  Image dark;
  Mask mask;
  double brightness = 1.0;
};

// Procedural mural-like tile: smooth colored regions, curvilinear strokes and
// speckle, samples within [0.04, 0.96].
Image synthetic_mural(int size, std::uint64_t seed);

struct SyntheticSample {
  Image gt;
  std::vector<Image> dark;  // one per brightness factor
  Mask mask;
  MaskSpec mask_spec;
};

inline const std::vector<double> kBrightnessFactors = {0.55, 0.37, 0.12};

// Masks cycle through the five families with coverage drawn uniformly from
// [coverage_lo, coverage_hi].
std::vector<SyntheticSample> make_synthetic_dataset(int count, int size, std::uint64_t seed,
                                                    double coverage_lo = 0.05, double coverage_hi = 0.50,
                                                    const std::vector<double>& factors = kBrightnessFactors);

// One training sample per (item, factor index).
std::vector<Sample> to_samples(const std::vector<SyntheticSample>& data, int factor_index);

struct StepReport {
  std::int64_t step = 0;
  int epoch = 0;
  Phase phase = Phase::Inpaint;
  int lambda_r = 0, lambda_e = 0;
  double lr = 0.0;
  int batch_size = 0;
  double enhancement = 0.0;  // L_E (enhance steps)
  RestorationParts parts;    // inpaint steps
  double restoration = 0.0;  // L_R = sum of parts
  double objective = 0.0;    // mer_loss value
  double grad_norm = 0.0;    // generator or enhancement norm before clipping
  double disc_grad_norm = 0.0;
};

std::string to_json_line(const StepReport& r);

// Batched inpaint inputs: I_in, I_gt as [N,3,H,W], M as [N,1,H,W].
struct InpaintBatch {
  Tensor<float> input, gt, mask;
};

struct InpaintForward {
  Tensor<float> coarse, local, global;  // merged stage outputs
  RestorationParts parts;
};

// Every inpaint loss for fixed weights and fixed spectral vectors, no updates.
InpaintForward evaluate_inpaint(const Params& params, const SpectralStates& spectral,
                                const FeatureExtractor& fx, const TrainingConfig& cfg,
                                const InpaintBatch& batch);

class Trainer {
 public:
  Trainer(TrainingConfig cfg, FeatureExtractor fx);
  Trainer(TrainingConfig cfg, FeatureExtractor fx, Params params);

  const TrainingConfig& config() const { return cfg_; }
  const Params& params() const { return params_; }
  Params& params() { return params_; }
  const SpectralStates& spectral() const { return spectral_; }
  std::int64_t steps() const { return steps_; }

  StepReport train_step_enhance(const std::vector<const Sample*>& batch, double lr);
  StepReport train_step_inpaint(const std::vector<const Sample*>& batch, double lr);

  // Shuffles, partitions and runs every batch of one epoch.
  std::vector<StepReport> train_epoch(const std::vector<Sample>& data, int epoch,
                                      const std::function<void(const StepReport&)>& on_step = {},
                                      int max_steps = -1);

  // Enhancement inference used as I_in for a sample (cached while enh.* is unchanged).
  const Tensor<float>& enhanced_input(const Sample& s);

  // I_in, I_gt and M stacked for a batch.
  InpaintBatch inpaint_batch(const std::vector<const Sample*>& batch);
  const FeatureExtractor& features() const { return fx_; }

 private:
  TrainingConfig cfg_;
  FeatureExtractor fx_;
  Params params_;
  OptimState enh_opt_, gen_opt_, disc_opt_;
  SpectralStates spectral_;
  std::int64_t steps_ = 0;
  void refresh_enh_cache();
  std::map<std::string, Tensor<float>> enh_cache_;
  std::string enh_cache_hash_;
};

// Stacks equally sized images into [N,C,H,W] and masks into [N,1,H,W].
Tensor<float> stack_images(const std::vector<const Image*>& images);
Tensor<float> stack_masks(const std::vector<const Mask*>& masks);

// Fresh parameters for every trainable network.
Params init_all_params(const TrainingConfig& cfg);

}  // namespace mer
