#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mer/image.hpp"

namespace mer {

using Bytes = std::vector<std::uint8_t>;
using TextChunks = std::map<std::string, std::string>;

struct DecodedPng {
  Image image;
  TextChunks text;
};

// Accepts non-interlaced grayscale (1/2/4/8-bit), RGB, palette, gray+alpha and
// RGBA (8-bit; alpha is dropped). Samples are byte / (2^depth - 1).
// Throws DecodeError with the byte offset of the failure.
DecodedPng decode_png(std::span<const std::uint8_t> bytes);
Image decode_image(std::span<const std::uint8_t> bytes);

// 8-bit gray (1 channel) or RGB (3 channels). Samples are clamped to [0,1]
// and rounded half-up to the byte grid. `text` becomes tEXt chunks.
Bytes encode_image(const Image& img, const TextChunks& text = {});

// 1-bit grayscale, white (255) = defect.
Bytes encode_mask(const Mask& mask, const TextChunks& text = {});
// Any supported PNG; a pixel is set when any channel is >= 0.5.
Mask decode_mask(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

Image load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image& img,
                const TextChunks& text = {});
Mask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const Mask& mask,
               const TextChunks& text = {});

// Byte the encoder writes for a sample.
inline std::uint8_t quantize_sample(float s) {
  const float c = s < 0.0f ? 0.0f : (s > 1.0f ? 1.0f : s);
  return static_cast<std::uint8_t>(static_cast<int>(c * 255.0f + 0.5f));
}

}  // namespace mer
