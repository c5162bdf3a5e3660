#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "mer/error.hpp"
#include "mer/checkpoint.hpp"
#include "mer/png.hpp"

using namespace mer;
namespace fs = std::filesystem;

namespace {

Params sample_params() {
  Params p;
  std::mt19937_64 rng(1);
  std::normal_distribution<float> d;
  p.emplace("netc.e0.weight", Tensor<float>({4, 3, 3, 3}));
  p.emplace("netc.e0.bias", Tensor<float>({4}));
  p.emplace("enh.h.l0.weight", Tensor<float>({2, 3, 3, 3}));
  p.emplace("scalar", Tensor<float>({1}));
  for (auto& [n, t] : p)
    for (float& v : t.values()) v = d(rng);
  return p;
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  const Params p = sample_params();
  const Bytes b = serialize_checkpoint(p);
  ASSERT_GE(b.size(), 8u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 8), "MERCKPT1");
  const Params back = parse_checkpoint(b);
  ASSERT_EQ(back.size(), p.size());
  for (const auto& [n, t] : p) EXPECT_EQ(back.at(n), t) << n;
  EXPECT_EQ(serialize_checkpoint(back), b);
}

TEST(Checkpoint, LayoutIsLittleEndian) {
  Params p;
  p.emplace("ab", Tensor<float>({2}, {1.0f, -2.0f}));
  const Bytes b = serialize_checkpoint(p);
  const Bytes want = {'M', 'E', 'R', 'C', 'K', 'P', 'T', '1', 2, 0, 0, 0, 'a', 'b', 0, 0, 0, 0, 1, 0, 0, 0,
                      2, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(b, want);
}

TEST(Checkpoint, MalformedInputIsLoadError) {
  Bytes b = serialize_checkpoint(sample_params());
  Bytes bad_magic = b;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad_magic), LoadError);
  EXPECT_THROW(parse_checkpoint(std::span(b).first(b.size() - 3)), LoadError);
  Bytes bad_dtype = b;
  bad_dtype[8 + 4 + std::string("enh.h.l0.weight").size()] = 7;
  EXPECT_THROW(parse_checkpoint(bad_dtype), LoadError);
}

TEST(Checkpoint, FileRoundTrip) {
  const fs::path path = fs::temp_directory_path() / ("mer_ckpt_" + std::to_string(std::random_device{}()) + ".bin");
  save_checkpoint(path, sample_params());
  EXPECT_EQ(params_hash(load_checkpoint(path)), params_hash(sample_params()));
  fs::remove(path);
  EXPECT_THROW(load_checkpoint(path), LoadError);
}

TEST(Checkpoint, RequireTensorsNamesEveryMissingOne) {
  const Params p = sample_params();
  EXPECT_NO_THROW(require_tensors(p, {"netc.e0.weight", "scalar"}));
  try {
    require_tensors(p, {"netc.e0.weight", "netg.x.weight", "disc.y.bias"});
    FAIL() << "no throw";
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("netg.x.weight"), std::string::npos);
    EXPECT_NE(msg.find("disc.y.bias"), std::string::npos);
  }
}

TEST(Checkpoint, HashCoversNamesShapesAndValues) {
  const Params p = sample_params();
  const std::string h = params_hash(p);
  EXPECT_EQ(h.size(), 64u);
  EXPECT_EQ(params_hash(p), h);
  Params q = p;
  q.at("scalar")[0] += 1e-6f;
  EXPECT_NE(params_hash(q), h);
  EXPECT_EQ(params_hash(q, {"netc.", "enh."}), params_hash(p, {"netc.", "enh."}));
  Params r = p;
  r.at("netc.e0.bias").reshape({2, 2});
  EXPECT_NE(params_hash(r), h);
  EXPECT_EQ(select_prefix(p, "netc.").size(), 2u);
  EXPECT_EQ(sha256_hex(Bytes{'a', 'b', 'c'}), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
