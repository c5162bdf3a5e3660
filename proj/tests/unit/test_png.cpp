#include <gtest/gtest.h>
#include <png.h>

#include <random>

#include "mer/error.hpp"
#include "mer/png.hpp"
#include "oracles.hpp"

using namespace mer;

namespace {

// Writes with libpng's simplified API.
Bytes libpng_encode(int w, int h, int format, const std::vector<std::uint8_t>& px) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = w;
  img.height = h;
  img.format = format;
  png_alloc_size_t size = 0;
  EXPECT_TRUE(png_image_write_get_memory_size(img, size, 0, px.data(), 0, nullptr));
  Bytes out(size);
  EXPECT_TRUE(png_image_write_to_memory(&img, out.data(), &size, 0, px.data(), 0, nullptr));
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> libpng_decode(const Bytes& bytes, int format, int* w, int* h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  EXPECT_TRUE(png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()));
  img.format = format;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  EXPECT_TRUE(png_image_finish_read(&img, nullptr, px.data(), 0, nullptr));
  *w = img.width;
  *h = img.height;
  return px;
}

}  // namespace

TEST(Png, SingleByteSamples) {
  for (std::uint8_t b : {0, 255}) {
    const Image img = decode_image(libpng_encode(1, 1, PNG_FORMAT_GRAY, {b}));
    ASSERT_EQ(img.channels(), 1);
    EXPECT_EQ(img.at(0, 0, 0), b / 255.0f);
  }
}

TEST(Png, MatchesLibpngDecoder) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int format : {int(PNG_FORMAT_RGB), int(PNG_FORMAT_GRAY), int(PNG_FORMAT_RGBA)}) {
    const int ch = PNG_IMAGE_SAMPLE_CHANNELS(format);
    std::vector<std::uint8_t> px(16 * 16 * ch);
    for (auto& v : px) v = static_cast<std::uint8_t>(byte(rng));
    const Image img = decode_image(libpng_encode(16, 16, format, px));
    const int keep = ch == 4 ? 3 : ch;
    ASSERT_EQ(img.channels(), keep);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        for (int c = 0; c < keep; ++c) EXPECT_EQ(img.at(y, x, c), px[(y * 16 + x) * ch + c] / 255.0f);
  }
}

TEST(Png, LibpngReadsOurEncoding) {
  std::mt19937_64 rng(12);
  const Image img = oracle::random_image(13, 17, 3, rng);
  int w = 0, h = 0;
  const auto px = libpng_decode(encode_image(img), PNG_FORMAT_RGB, &w, &h);
  ASSERT_EQ(w, 17);
  ASSERT_EQ(h, 13);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(px[(y * w + x) * 3 + c], quantize_sample(img.at(y, x, c)));
}

TEST(Png, QuantizationRules) {
  EXPECT_EQ(quantize_sample(0.5f), 128);
  EXPECT_EQ(quantize_sample(1.2f), 255);
  EXPECT_EQ(quantize_sample(-0.3f), 0);
}

TEST(Png, RoundTripWithinHalfStep) {
  std::mt19937_64 rng(13);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Image img = oracle::random_image(8, 9, i % 2 ? 3 : 1, rng);
    const Image back = decode_image(encode_image(img));
    for (std::size_t k = 0; k < img.size(); ++k)
      worst = std::max(worst, std::abs(double(back.samples()[k]) - img.samples()[k]));
  }
  EXPECT_LE(worst, 1.0 / 510.0 + 1e-7);
}

TEST(Png, EightBitFileReencodesIdentically) {
  std::vector<std::uint8_t> px(20 * 10 * 3);
  std::mt19937_64 rng(14);
  for (auto& v : px) v = static_cast<std::uint8_t>(rng());
  const Bytes ours = encode_image(decode_image(libpng_encode(20, 10, PNG_FORMAT_RGB, px)));
  EXPECT_EQ(encode_image(decode_image(ours)), ours);
  int w = 0, h = 0;
  EXPECT_EQ(libpng_decode(ours, PNG_FORMAT_RGB, &w, &h), px);
}

TEST(Png, TextChunksSurvive) {
  const Bytes b = encode_image(Image(2, 2, 3, 0.5f), {{"mer:job", "abc"}});
  EXPECT_EQ(decode_png(b).text.at("mer:job"), "abc");
}

TEST(Png, MaskRoundTrip) {
  std::mt19937_64 rng(15);
  const Mask m = oracle::random_mask(33, 31, 0.3, rng);
  EXPECT_EQ(decode_mask(encode_mask(m)), m);
}

TEST(Png, MalformedStreamReportsOffset) {
  Bytes b = encode_image(Image(4, 4, 3, 0.2f));
  EXPECT_THROW(decode_image(Bytes(b.begin(), b.begin() + 5)), DecodeError);
  b[20] ^= 0xff;  // IHDR payload, breaks its CRC
  try {
    decode_image(b);
    FAIL() << "expected DecodeError";
  } catch (const DecodeError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
  EXPECT_THROW(encode_image(Image()), ArgumentError);
}
