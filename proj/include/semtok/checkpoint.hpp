#pragma once

// Binary model checkpoint:
//
//   "STKC" | u32 version | u32 json_len | model config JSON
//   | u32 tensor_count | records | u32 crc32
//   record: u32 name_len | name (UTF-8) | u32 ndim | u32 dims[ndim] | f64 payload
//
// Integers and doubles are little-endian. The CRC covers every preceding byte.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semtok/transformer.hpp"

namespace semtok {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> serialize_checkpoint(const Model& model);
// Raw writer; lets tests pair a config with tensors it does not describe.
std::vector<unsigned char> serialize_checkpoint(const ModelConfig& config,
                                                const std::vector<NamedTensor>& tensors,
                                                std::uint32_t version = kCheckpointVersion);
// Throws CorruptionError (bad magic, CRC mismatch, truncation), VersionError
// or ShapeError (names/shapes disagree with the embedded config).
Model deserialize_checkpoint(const std::vector<unsigned char>& bytes);

// Writes atomically through a temporary file in the same directory.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace semtok
