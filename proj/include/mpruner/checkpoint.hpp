#pragma once

// Self-describing binary checkpoint:
//
//   "MPRK" | u16 version | u32 input_dim | u32 num_classes | u32 seq_len
//   | u32 num_blocks | per block { u8 kind, u32 width, u32 inner_width,
//   u32 out_width, u8 trainable } | u8 embed_trainable | u8 head_trainable
//   | u32 num_hooks | u32 hook... | u32 num_tensors
//   | per tensor { u8 rank, u32 dim..., f32 value... } | u32 crc32
//
// All integers and floats little-endian; tensors in canonical parameter order,
// values row-major.

#include "mpruner/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace mpruner {

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> save_checkpoint(const Model<float>& model);

/// Throws FormatError on a truncated, corrupt or version-mismatched payload.
Model<float> load_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint_file(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_checkpoint_file(const std::filesystem::path& path);

}  // namespace mpruner
