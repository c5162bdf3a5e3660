#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mer/png.hpp"
#include "mer/tensor.hpp"

namespace mer {

// Binary layout, little-endian:
//   "MERCKPT1"
//   repeated until end of file:
//     u32 name length, name bytes (UTF-8)
//     u32 dtype (0 = float32)
//     u32 rank, rank x u32 dims
//     float32 data, product(dims) values
Bytes serialize_checkpoint(const Params& params);
Params parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Params& params);
Params load_checkpoint(const std::filesystem::path& path);

// Throws LoadError naming every absent tensor.
void require_tensors(const Params& params, const std::vector<std::string>& names);

// Tensors whose name starts with `prefix` (empty = all).
Params select_prefix(const Params& params, const std::string& prefix);

// SHA-256 (hex) over name, shape and raw bytes of every tensor whose name
// starts with one of the prefixes.
std::string params_hash(const Params& params, const std::vector<std::string>& prefixes = {""});

std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace mer
