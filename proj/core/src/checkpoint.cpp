#include "mer/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <memory>

namespace mer {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'E', 'R', 'C', 'K', 'P', 'T', '1'};

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  bool done() const { return pos_ == b_.size(); }
  std::size_t pos() const { return pos_; }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw LoadError(std::string("checkpoint truncated reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (name.compare(0, p.size(), p) == 0) return true;
  }
  return false;
}

}  // namespace

Bytes serialize_checkpoint(const Params& params) {
  Bytes out(kMagic, kMagic + 8);
  for (const auto& [name, t] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, 0);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), raw, raw + t.size() * sizeof(float));
  }
  return out;
}

Params parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw LoadError("not a MERCKPT1 checkpoint");
  Reader r(bytes.subspan(8));
  Params params;
  while (!r.done()) {
    const std::size_t at = r.pos() + 8;
    const std::uint32_t len = r.u32();
    auto name_bytes = r.take(len, "tensor name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint32_t dtype = r.u32();
    if (dtype != 0) throw LoadError("tensor " + name + " has unsupported dtype " + std::to_string(dtype));
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw LoadError("tensor " + name + " has implausible rank " + std::to_string(rank));
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32();
      shape.push_back(static_cast<int>(d));
      count *= d;
      if (count > (std::size_t{1} << 32)) throw LoadError("tensor " + name + " is too large");
    }
    auto raw = r.take(count * sizeof(float), "tensor data");
    std::vector<float> data(count);
    if (count) std::memcpy(data.data(), raw.data(), raw.size());
    if (params.count(name)) throw LoadError("duplicate tensor " + name + " at byte " + std::to_string(at));
    params.emplace(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const Params& params) {
  write_file(path, serialize_checkpoint(params));
}

Params load_checkpoint(const std::filesystem::path& path) {
  Bytes bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw LoadError("cannot read checkpoint " + path.string() + ": " + e.what());
  }
  return parse_checkpoint(bytes);
}

void require_tensors(const Params& params, const std::vector<std::string>& names) {
  std::string missing;
  for (const auto& n : names) {
    if (!params.count(n)) missing += (missing.empty() ? "" : ", ") + n;
  }
  if (!missing.empty()) throw LoadError("checkpoint is missing tensors: " + missing);
}

Params select_prefix(const Params& params, const std::string& prefix) {
  Params out;
  for (const auto& [name, t] : params) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.emplace(name, t);
  }
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string params_hash(const Params& params, const std::vector<std::string>& prefixes) {
  Params chosen;
  for (const auto& [name, t] : params) {
    if (has_prefix(name, prefixes)) chosen.emplace(name, t);
  }
  return sha256_hex(serialize_checkpoint(chosen));
}

}  // namespace mer
