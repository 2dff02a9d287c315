#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fundus/model.hpp"

namespace fundus::io {

// Binary layout, all integers little-endian:
//   "MDGC" | u32 version (1) | u32 length | architecture JSON |
//   u32 tensor count | per tensor: u32 name length | UTF-8 name | u8 rank |
//   u32 dims[rank] | f64 values[prod(dims)]
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> save_checkpoint(const models::Model& model);

// Rejects bad magic, unknown versions, truncation (naming the tensor being
// read) and tensors that disagree with the embedded architecture.
models::Model load_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const models::Model& model);
models::Model read_checkpoint(const std::filesystem::path& path);

}  // namespace fundus::io
