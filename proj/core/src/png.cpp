#include "mer/png.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mer/error.hpp"

namespace mer {

namespace {

constexpr std::array<std::uint8_t, 8> kSignature = {0x89, 'P', 'N', 'G',
                                                    '\r', '\n', 0x1a, '\n'};

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(Bytes& out, const char* type, std::span<const std::uint8_t> data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + crc_start,
                          static_cast<uInt>(out.size() - crc_start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

struct Header {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  int depth = 0;
  int color_type = 0;
  int interlace = 0;
};

int samples_per_pixel(int color_type) {
  switch (color_type) {
    case 0: return 1;
    case 2: return 3;
    case 3: return 1;
    case 4: return 2;
    case 6: return 4;
    default: return 0;
  }
}

Bytes inflate_all(const Bytes& compressed, std::size_t expected, std::size_t offset) {
  Bytes out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw DecodeError("zlib init failed", offset);
  zs.next_in = const_cast<Bytef*>(compressed.data());
  zs.avail_in = static_cast<uInt>(compressed.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected) {
    throw DecodeError("corrupt or truncated image data", offset);
  }
  return out;
}

Bytes deflate_all(const Bytes& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  Bytes out(bound);
  if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw std::runtime_error("zlib compression failed");
  }
  out.resize(bound);
  return out;
}

// Picks the filter with the smallest sum of absolute residuals per row.
Bytes filter_rows(const Bytes& raw, std::size_t stride, std::size_t rows, int bpp) {
  Bytes out;
  out.reserve(rows * (stride + 1));
  std::vector<std::uint8_t> zero(stride, 0);
  std::array<Bytes, 5> cand;
  for (auto& c : cand) c.resize(stride);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* cur = raw.data() + r * stride;
    const std::uint8_t* up = r ? raw.data() + (r - 1) * stride : zero.data();
    std::size_t best = 0;
    long best_cost = -1;
    for (int f = 0; f < 5; ++f) {
      long cost = 0;
      for (std::size_t i = 0; i < stride; ++i) {
        const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
        const int b = up[i];
        const int c = i >= static_cast<std::size_t>(bpp) ? up[i - bpp] : 0;
        int pred = 0;
        switch (f) {
          case 1: pred = a; break;
          case 2: pred = b; break;
          case 3: pred = (a + b) / 2; break;
          case 4: pred = paeth(a, b, c); break;
          default: break;
        }
        const auto v = static_cast<std::uint8_t>(cur[i] - pred);
        cand[f][i] = v;
        cost += v < 128 ? v : 256 - v;
      }
      if (best_cost < 0 || cost < best_cost) {
        best_cost = cost;
        best = static_cast<std::size_t>(f);
      }
    }
    out.push_back(static_cast<std::uint8_t>(best));
    out.insert(out.end(), cand[best].begin(), cand[best].end());
  }
  return out;
}

Bytes assemble(std::uint32_t width, std::uint32_t height, int depth, int color_type,
               const Bytes& filtered, const TextChunks& text) {
  Bytes out(kSignature.begin(), kSignature.end());
  Bytes ihdr;
  put_be32(ihdr, width);
  put_be32(ihdr, height);
  ihdr.push_back(static_cast<std::uint8_t>(depth));
  ihdr.push_back(static_cast<std::uint8_t>(color_type));
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  for (const auto& [key, value] : text) {
    if (key.empty() || key.size() > 79) throw ArgumentError("bad tEXt keyword");
    Bytes t(key.begin(), key.end());
    t.push_back(0);
    t.insert(t.end(), value.begin(), value.end());
    put_chunk(out, "tEXt", t);
  }
  put_chunk(out, "IDAT", deflate_all(filtered));
  put_chunk(out, "IEND", {});
  return out;
}

}  // namespace

DecodedPng decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kSignature.size() ||
      !std::equal(kSignature.begin(), kSignature.end(), bytes.begin())) {
    throw DecodeError("missing PNG signature", 0);
  }
  Header hdr;
  bool have_header = false;
  bool have_end = false;
  std::size_t idat_offset = 0;
  Bytes compressed;
  std::vector<std::array<std::uint8_t, 3>> palette;
  DecodedPng result;

  std::size_t pos = kSignature.size();
  while (pos < bytes.size() && !have_end) {
    if (pos + 12 > bytes.size()) throw DecodeError("truncated chunk header", pos);
    const std::uint32_t len = read_be32(bytes, pos);
    if (len > bytes.size() - pos - 12) throw DecodeError("chunk length past end of stream", pos);
    const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const std::uint8_t* data = bytes.data() + pos + 8;
    const uLong crc = crc32(0L, bytes.data() + pos + 4, len + 4);
    if (crc != read_be32(bytes, pos + 8 + len)) {
      throw DecodeError("CRC mismatch in " + type + " chunk", pos + 8 + len);
    }
    if (!have_header && type != "IHDR") throw DecodeError("first chunk is not IHDR", pos);
    if (type == "IHDR") {
      if (len != 13) throw DecodeError("bad IHDR length", pos);
      std::span<const std::uint8_t> d(data, len);
      hdr.width = read_be32(d, 0);
      hdr.height = read_be32(d, 4);
      hdr.depth = d[8];
      hdr.color_type = d[9];
      hdr.interlace = d[12];
      if (d[10] != 0 || d[11] != 0) throw DecodeError("unknown compression/filter method", pos + 18);
      if (hdr.width == 0 || hdr.height == 0 || hdr.width > (1u << 16) || hdr.height > (1u << 16)) {
        throw DecodeError("unsupported image dimensions", pos + 8);
      }
      if (samples_per_pixel(hdr.color_type) == 0) throw DecodeError("unknown color type", pos + 17);
      const bool low_depth_ok = hdr.color_type == 0 || hdr.color_type == 3;
      if (!(hdr.depth == 8 || (low_depth_ok && (hdr.depth == 1 || hdr.depth == 2 || hdr.depth == 4)))) {
        throw DecodeError("unsupported bit depth " + std::to_string(hdr.depth), pos + 16);
      }
      if (hdr.interlace != 0) throw DecodeError("interlaced PNG not supported", pos + 20);
      have_header = true;
    } else if (type == "PLTE") {
      if (len % 3 != 0 || len == 0) throw DecodeError("bad PLTE length", pos);
      for (std::uint32_t i = 0; i < len; i += 3) palette.push_back({data[i], data[i + 1], data[i + 2]});
    } else if (type == "IDAT") {
      if (compressed.empty()) idat_offset = pos;
      compressed.insert(compressed.end(), data, data + len);
    } else if (type == "tEXt") {
      const auto* nul = static_cast<const std::uint8_t*>(std::memchr(data, 0, len));
      if (nul) {
        result.text.emplace(std::string(reinterpret_cast<const char*>(data), reinterpret_cast<const char*>(nul)),
                            std::string(reinterpret_cast<const char*>(nul + 1),
                                        reinterpret_cast<const char*>(data + len)));
      }
    } else if (type == "IEND") {
      have_end = true;
    } else if (!(type[0] & 0x20)) {
      throw DecodeError("unknown critical chunk " + type, pos + 4);
    }
    pos += 12 + len;
  }
  if (!have_header) throw DecodeError("no IHDR chunk", pos);
  if (compressed.empty()) throw DecodeError("no IDAT chunk", pos);
  if (hdr.color_type == 3 && palette.empty()) throw DecodeError("palette image without PLTE", pos);

  const int spp = samples_per_pixel(hdr.color_type);
  const std::size_t bits_per_pixel = static_cast<std::size_t>(spp) * hdr.depth;
  const std::size_t stride = (hdr.width * bits_per_pixel + 7) / 8;
  const int bpp = static_cast<int>(std::max<std::size_t>(1, bits_per_pixel / 8));
  Bytes raw = inflate_all(compressed, hdr.height * (stride + 1), idat_offset);

  Bytes pixels(hdr.height * stride);
  for (std::uint32_t r = 0; r < hdr.height; ++r) {
    const std::uint8_t ft = raw[r * (stride + 1)];
    const std::uint8_t* src = raw.data() + r * (stride + 1) + 1;
    std::uint8_t* cur = pixels.data() + r * stride;
    const std::uint8_t* up = r ? pixels.data() + (r - 1) * stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
      int pred = 0;
      switch (ft) {
        case 0: break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: pred = paeth(a, b, c); break;
        default: throw DecodeError("bad filter type " + std::to_string(ft), idat_offset);
      }
      cur[i] = static_cast<std::uint8_t>(src[i] + pred);
    }
  }

  const int out_channels = (hdr.color_type == 2 || hdr.color_type == 3 || hdr.color_type == 6) ? 3 : 1;
  Image img(static_cast<int>(hdr.height), static_cast<int>(hdr.width), out_channels);
  const float max_value = static_cast<float>((1 << hdr.depth) - 1);
  for (std::uint32_t y = 0; y < hdr.height; ++y) {
    const std::uint8_t* row = pixels.data() + y * stride;
    for (std::uint32_t x = 0; x < hdr.width; ++x) {
      if (hdr.depth < 8) {
        const std::size_t bit = x * static_cast<std::size_t>(hdr.depth);
        const int shift = 8 - hdr.depth - static_cast<int>(bit % 8);
        const int v = (row[bit / 8] >> shift) & ((1 << hdr.depth) - 1);
        if (hdr.color_type == 3) {
          if (static_cast<std::size_t>(v) >= palette.size()) throw DecodeError("palette index out of range", idat_offset);
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = palette[v][c] / 255.0f;
        } else {
          img.at(y, x, 0) = static_cast<float>(v) / max_value;
        }
        continue;
      }
      const std::uint8_t* px = row + x * spp;
      switch (hdr.color_type) {
        case 0:
        case 4:
          img.at(y, x, 0) = px[0] / 255.0f;
          break;
        case 2:
        case 6:
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = px[c] / 255.0f;
          break;
        case 3:
          if (px[0] >= palette.size()) throw DecodeError("palette index out of range", idat_offset);
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = palette[px[0]][c] / 255.0f;
          break;
        default:
          break;
      }
    }
  }
  result.image = std::move(img);
  return result;
}

Image decode_image(std::span<const std::uint8_t> bytes) { return decode_png(bytes).image; }

Bytes encode_image(const Image& img, const TextChunks& text) {
  if (img.height() < 1 || img.width() < 1) throw ArgumentError("cannot encode an empty image");
  if (img.channels() != 1 && img.channels() != 3) {
    throw ArgumentError("encode_image needs 1 or 3 channels, got " + std::to_string(img.channels()));
  }
  const std::size_t stride = static_cast<std::size_t>(img.width()) * img.channels();
  Bytes raw(stride * img.height());
  auto s = img.samples();
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = quantize_sample(s[i]);
  const Bytes filtered = filter_rows(raw, stride, static_cast<std::size_t>(img.height()), img.channels());
  return assemble(static_cast<std::uint32_t>(img.width()), static_cast<std::uint32_t>(img.height()), 8,
                  img.channels() == 3 ? 2 : 0, filtered, text);
}

Bytes encode_mask(const Mask& mask, const TextChunks& text) {
  if (mask.height() < 1 || mask.width() < 1) throw ArgumentError("cannot encode an empty mask");
  const std::size_t stride = (static_cast<std::size_t>(mask.width()) + 7) / 8;
  Bytes filtered;
  filtered.reserve(mask.height() * (stride + 1));
  for (int y = 0; y < mask.height(); ++y) {
    filtered.push_back(0);
    for (std::size_t b = 0; b < stride; ++b) {
      std::uint8_t v = 0;
      for (int k = 0; k < 8; ++k) {
        const std::size_t x = b * 8 + k;
        if (x < static_cast<std::size_t>(mask.width()) && mask.at(y, static_cast<int>(x))) {
          v |= static_cast<std::uint8_t>(0x80 >> k);
        }
      }
      filtered.push_back(v);
    }
  }
  return assemble(static_cast<std::uint32_t>(mask.width()), static_cast<std::uint32_t>(mask.height()), 1, 0,
                  filtered, text);
}

Mask decode_mask(std::span<const std::uint8_t> bytes) { return image_to_mask(decode_image(bytes)); }

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

Image load_image(const std::filesystem::path& path) { return decode_image(read_file(path)); }

void save_image(const std::filesystem::path& path, const Image& img, const TextChunks& text) {
  write_file(path, encode_image(img, text));
}

Mask load_mask(const std::filesystem::path& path) { return decode_mask(read_file(path)); }

void save_mask(const std::filesystem::path& path, const Mask& mask, const TextChunks& text) {
  write_file(path, encode_mask(mask, text));
}

}  // namespace mer
