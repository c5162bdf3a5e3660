#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mer/image.hpp"
#include "mer/layers.hpp"
#include "mer/spectral.hpp"

namespace mer {

inline constexpr int kUNetLevels = 8;
inline constexpr int kInpaintTile = 256;

struct InpaintConfig {
  int width = 16;       // base width w; encoder channels w,2w,4w,8w,8w,...
  int netl_scale = 2;   // 2: up/down blocks resample (4x internal resolution); 1: plain convs
  int disc_width = 0;   // 0 = same as width

  int discriminator_width() const { return disc_width > 0 ? disc_width : width; }
  void validate() const;
};

// Channels of encoder level l (1..8).
int encoder_channels(int width, int level);

// Parameter shapes of the U-Net used by NetC (in_channels 4) and NetG (3 +
// attention). Names: <prefix>.enc{1..8}, <prefix>.dec{0..7}, <prefix>.att{l}.{q,k,v}.
std::vector<std::pair<std::string, Shape>> unet_parameter_shapes(const std::string& prefix, int in_channels,
                                                                 int width, bool attention);
// Encoder levels whose skip features pass through attention: 2, 3, 4
// (64x64, 32x32 and 16x16 on a 256 tile).
std::vector<int> attention_levels();

Network netl_network(const InpaintConfig& cfg);
Network disc_network(const InpaintConfig& cfg);

// Chain of layers along the deepest NetC path, for receptive-field accounting.
Network netc_deepest_path(const InpaintConfig& cfg);

// Seeded init of netc., netl., netg. and disc. tensors plus meta.netl.scale.
void init_inpaint(Params& params, const InpaintConfig& cfg, std::uint64_t seed);
// Recovers widths from tensor shapes and meta.netl.scale.
InpaintConfig infer_inpaint_config(const Params& params);

// Power-iteration state per discriminator weight ("disc.l0.weight", ...).
using SpectralStates = std::map<std::string, PowerIterState>;
SpectralStates make_spectral_states(const InpaintConfig& cfg, std::uint64_t seed);
template <typename T>
std::map<std::string, std::vector<T>> spectral_vectors(const SpectralStates& states);
// One (or more) power iterations on every discriminator weight.
void update_spectral_states(const Params& params, SpectralStates& states, int iterations);

// ---- graph-level networks; images are [N,3,H,W], masks [N,1,H,W] with 1 = hole ----

// I_in * (1 - M) + I_out * M, selecting exactly (known pixels are copied).
template <typename T>
Var merge(Graph<T>& g, Var in, Var out, const Tensor<T>& mask);

template <typename T>
Var netc_forward(Scope<T>& s, Var image, const Tensor<T>& mask, const InpaintConfig& cfg);
template <typename T>
Var netl_forward(Scope<T>& s, Var image, const InpaintConfig& cfg);
template <typename T>
Var netg_forward(Scope<T>& s, Var image, const InpaintConfig& cfg);
// Plain NetC-topology pass over 3-channel input using NetG's weights with attention skipped.
template <typename T>
Var netg_forward_without_attention(Scope<T>& s, Var image, const InpaintConfig& cfg);
// Needs s.set_spectral(...) with vectors for every disc weight.
template <typename T>
Var disc_forward(Scope<T>& s, Var image, const InpaintConfig& cfg);

// ---- image-level API ----

Image merge_with_mask(const Image& in, const Image& out, const Mask& mask);

struct StageImages {
  Image coarse_raw, coarse;  // I_out^C, I_mer^C
  Image local_raw, local;    // I_out^L, I_mer^L
  Image global_raw, global;  // I_out^G, I_mer^G
};

Image coarse_inpaint(const Params& params, const Image& in, const Mask& mask);
Image local_refine(const Params& params, const Image& merged);
Image global_refine(const Params& params, const Image& merged, std::vector<Tensor<float>>* attention = nullptr);
StageImages inpaint_stages(const Params& params, const Image& in, const Mask& mask);
// 32x32 score map for a 256x256 image (spectral states are advanced by `iterations`).
Tensor<float> discriminate(const Params& params, SpectralStates& states, const Image& img, int iterations = 1);

}  // namespace mer
