#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "shapeset/diffusion.hpp"

namespace shapeset {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian):
///   "SSCK" u32 version
///   u32 m, u32 q, m x string category names
///   denoiser: u32 width, blocks, heads, time_dim, ffn_mult, u8 attend_padding
///   f64 loss weights (mse, ce, kl)
///   codebook: f64 sigma, (m+1)^2 f64 means row-major
///   schedule: u32 T, T x f64 betas
///   m x (u64 size, SSM blob as in ssm_<category>.bin)
///   u32 tensor count, per tensor u32 rows, u32 cols, row-major f32
///   u64 FNV-1a of everything above
std::vector<std::uint8_t> encode_checkpoint(const Model& model);

/// Throws CorruptFileError on truncation or checksum failure, ValidationError
/// on a version mismatch and ConfigMismatchError when the stored pieces
/// disagree with each other or with `expected`.
Model decode_checkpoint(std::span<const std::uint8_t> bytes, const std::optional<LatentLayout>& expected = std::nullopt);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path, const std::optional<LatentLayout>& expected = std::nullopt);

}  // namespace shapeset
