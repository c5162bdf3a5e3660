#include "mer/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mer/error.hpp"

namespace mer {

const double kYuvFromRgb[3][3] = {
    {0.299, 0.587, 0.114},
    {-0.168735891647856, -0.331264108352144, 0.5},
    {0.5, -0.418687589158345, -0.081312410841655},
};

namespace {

constexpr double kRgbFromYuv[3][3] = {
    {1.0, 0.0, 1.402},
    {1.0, -0.344136286201022, -0.714136286201022},
    {1.0, 1.772, 0.0},
};

Image mix_channels(const Image& img, const double (&m)[3][3]) {
  if (img.channels() != 3) {
    throw ArgumentError("color conversion needs 3 channels, got " +
                        std::to_string(img.channels()));
  }
  Image out(img.height(), img.width(), 3);
  auto src = img.samples();
  auto dst = out.samples();
  for (std::size_t i = 0; i < src.size(); i += 3) {
    const double a = src[i], b = src[i + 1], c = src[i + 2];
    for (int r = 0; r < 3; ++r) {
      dst[i + r] = static_cast<float>(m[r][0] * a + m[r][1] * b + m[r][2] * c);
    }
  }
  return out;
}

// Mirror index without repeating the edge sample (abcd -> ...cb|abcd|cb...).
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename Tile, typename CopyFn>
std::vector<Tile> cut(const TileGrid& g, CopyFn copy_tile) {
  std::vector<Tile> tiles;
  tiles.reserve(static_cast<std::size_t>(g.tile_count()));
  for (int ty = 0; ty < g.tiles_y; ++ty) {
    for (int tx = 0; tx < g.tiles_x; ++tx) {
      tiles.push_back(copy_tile(ty * g.tile, tx * g.tile));
    }
  }
  return tiles;
}

void check_tiles(const TileGrid& g, std::size_t count) {
  if (g.tile < 1) throw ArgumentError("tile size must be >= 1");
  if (count != static_cast<std::size_t>(g.tile_count())) {
    throw ArgumentError("expected " + std::to_string(g.tile_count()) +
                        " tiles, got " + std::to_string(count));
  }
}

}  // namespace

Image::Image(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) {
    throw ArgumentError("negative image dimension");
  }
  samples_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Mask::Mask(int height, int width, std::uint8_t fill)
    : height_(height), width_(width) {
  if (height < 0 || width < 0) throw ArgumentError("negative mask dimension");
  bits_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

Mask Mask::complement() const {
  Mask out = *this;
  for (auto& b : out.bits_) b = b ? 0 : 1;
  return out;
}

Image scale_brightness(const Image& img, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw ArgumentError("brightness factor must be > 0");
  }
  Image out = img;
  for (float& s : out.samples()) {
    s = static_cast<float>(std::clamp(static_cast<double>(s) * factor, 0.0, 1.0));
  }
  return out;
}

Image rgb_to_yuv(const Image& img) { return mix_channels(img, kYuvFromRgb); }
Image yuv_to_rgb(const Image& img) { return mix_channels(img, kRgbFromYuv); }

Image luma(const Image& img) {
  if (img.channels() != 3) throw ArgumentError("luma needs 3 channels");
  Image out(img.height(), img.width(), 1);
  auto src = img.samples();
  auto dst = out.samples();
  for (std::size_t p = 0; p < dst.size(); ++p) {
    dst[p] = static_cast<float>(kYuvFromRgb[0][0] * src[3 * p] +
                                kYuvFromRgb[0][1] * src[3 * p + 1] +
                                kYuvFromRgb[0][2] * src[3 * p + 2]);
  }
  return out;
}

Image ensure_rgb(const Image& img) {
  if (img.channels() == 3) return img;
  if (img.channels() != 1) throw ArgumentError("expected a gray or RGB image, got " + std::to_string(img.channels()) + " channels");
  Image out(img.height(), img.width(), 3);
  auto src = img.samples();
  auto dst = out.samples();
  for (std::size_t p = 0; p < src.size(); ++p) dst[3 * p] = dst[3 * p + 1] = dst[3 * p + 2] = src[p];
  return out;
}

TileGrid make_tile_grid(int height, int width, int tile) {
  if (tile < 1) throw ArgumentError("tile size must be >= 1");
  if (height < 1 || width < 1) throw ArgumentError("cannot tile an empty image");
  TileGrid g;
  g.source_height = height;
  g.source_width = width;
  g.tile = tile;
  g.tiles_y = (height + tile - 1) / tile;
  g.tiles_x = (width + tile - 1) / tile;
  g.padded_height = g.tiles_y * tile;
  g.padded_width = g.tiles_x * tile;
  return g;
}

std::vector<Image> split_tiles(const Image& img, int tile, TileGrid* grid) {
  const TileGrid g = make_tile_grid(img.height(), img.width(), tile);
  if (grid) *grid = g;
  const int ch = img.channels();
  return cut<Image>(g, [&](int y0, int x0) {
    Image t(tile, tile, ch);
    for (int y = 0; y < tile; ++y) {
      const int sy = reflect_index(y0 + y, img.height());
      for (int x = 0; x < tile; ++x) {
        const int sx = reflect_index(x0 + x, img.width());
        for (int c = 0; c < ch; ++c) t.at(y, x, c) = img.at(sy, sx, c);
      }
    }
    return t;
  });
}

std::vector<Mask> split_tiles(const Mask& mask, int tile, TileGrid* grid) {
  const TileGrid g = make_tile_grid(mask.height(), mask.width(), tile);
  if (grid) *grid = g;
  return cut<Mask>(g, [&](int y0, int x0) {
    Mask t(tile, tile);
    for (int y = 0; y < tile; ++y) {
      const int sy = reflect_index(y0 + y, mask.height());
      for (int x = 0; x < tile; ++x) {
        t.at(y, x) = mask.at(sy, reflect_index(x0 + x, mask.width()));
      }
    }
    return t;
  });
}

Image stitch_tiles(const TileGrid& g, std::span<const Image> tiles) {
  check_tiles(g, tiles.size());
  const int ch = tiles.empty() ? 0 : tiles[0].channels();
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i].height() != g.tile || tiles[i].width() != g.tile ||
        tiles[i].channels() != ch) {
      throw ArgumentError("tile " + std::to_string(i) + " has wrong size");
    }
  }
  Image out(g.source_height, g.source_width, ch);
  for (int y = 0; y < g.source_height; ++y) {
    const int ty = y / g.tile, iy = y % g.tile;
    for (int x = 0; x < g.source_width; ++x) {
      const Image& t = tiles[static_cast<std::size_t>(ty * g.tiles_x + x / g.tile)];
      for (int c = 0; c < ch; ++c) out.at(y, x, c) = t.at(iy, x % g.tile, c);
    }
  }
  return out;
}

Mask stitch_tiles(const TileGrid& g, std::span<const Mask> tiles) {
  check_tiles(g, tiles.size());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i].height() != g.tile || tiles[i].width() != g.tile) {
      throw ArgumentError("tile " + std::to_string(i) + " has wrong size");
    }
  }
  Mask out(g.source_height, g.source_width);
  for (int y = 0; y < g.source_height; ++y) {
    for (int x = 0; x < g.source_width; ++x) {
      const Mask& t =
          tiles[static_cast<std::size_t>((y / g.tile) * g.tiles_x + x / g.tile)];
      out.at(y, x) = t.at(y % g.tile, x % g.tile);
    }
  }
  return out;
}

Image mask_to_image(const Mask& mask) {
  Image out(mask.height(), mask.width(), 1);
  auto bits = mask.bits();
  auto s = out.samples();
  for (std::size_t i = 0; i < bits.size(); ++i) s[i] = bits[i] ? 1.0f : 0.0f;
  return out;
}

Mask image_to_mask(const Image& img) {
  Mask out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      bool set = false;
      for (int c = 0; c < img.channels(); ++c) set = set || img.at(y, x, c) >= 0.5f;
      out.at(y, x) = set ? 1 : 0;
    }
  }
  return out;
}

Image clamp01(const Image& img) {
  Image out = img;
  for (float& s : out.samples()) s = std::clamp(s, 0.0f, 1.0f);
  return out;
}

double mean_value(const Image& img) {
  if (img.empty()) return 0.0;
  double sum = 0.0;
  for (float s : img.samples()) sum += s;
  return sum / static_cast<double>(img.size());
}

}  // namespace mer
