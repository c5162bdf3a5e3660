#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mer {

// H x W x C floating image, row-major (row, column, channel), nominal [0,1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, float fill = 0.0f);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  float& at(int row, int col, int ch) { return samples_[index(row, col, ch)]; }
  float at(int row, int col, int ch) const { return samples_[index(row, col, ch)]; }

  std::span<float> samples() { return samples_; }
  std::span<const float> samples() const { return samples_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }
  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> samples_;
};

// Binary defect map: 1 = missing/defective pixel, 0 = valid.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, std::uint8_t fill = 0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  std::uint8_t& at(int row, int col) {
    return bits_[static_cast<std::size_t>(row) * width_ + col];
  }
  std::uint8_t at(int row, int col) const {
    return bits_[static_cast<std::size_t>(row) * width_ + col];
  }
  std::span<std::uint8_t> bits() { return bits_; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  std::size_t count() const;
  Mask complement() const;
  bool operator==(const Mask& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct TileGrid {
  int source_height = 0;
  int source_width = 0;
  int tile = 256;
  int padded_height = 0;
  int padded_width = 0;
  int tiles_y = 0;
  int tiles_x = 0;

  int tile_count() const { return tiles_y * tiles_x; }
  bool operator==(const TileGrid&) const = default;
};

// Low-light simulation: every sample multiplied by `factor`, clamped to [0,1].
Image scale_brightness(const Image& img, double factor);

// BT.601 full-range. Y in [0,1], U and V signed in [-0.5,0.5].
extern const double kYuvFromRgb[3][3];
Image rgb_to_yuv(const Image& img);
Image yuv_to_rgb(const Image& img);

// Luma of a 3-channel image as a 1-channel image.
Image luma(const Image& img);

// Gray images are replicated to 3 channels; RGB is returned as is.
Image ensure_rgb(const Image& img);

TileGrid make_tile_grid(int height, int width, int tile);
// Reflect-pads to multiples of `tile` and cuts row-major.
std::vector<Image> split_tiles(const Image& img, int tile, TileGrid* grid);
std::vector<Mask> split_tiles(const Mask& mask, int tile, TileGrid* grid);
Image stitch_tiles(const TileGrid& grid, std::span<const Image> tiles);
Mask stitch_tiles(const TileGrid& grid, std::span<const Mask> tiles);

// Mask <-> single-channel image (255/1.0 = defect). Pixels >= 0.5 count as set.
Image mask_to_image(const Mask& mask);
Mask image_to_mask(const Image& img);

Image clamp01(const Image& img);
double mean_value(const Image& img);

}  // namespace mer
