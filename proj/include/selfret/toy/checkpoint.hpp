#pragma once

#include <cstdint>
#include <filesystem>

#include "selfret/toy/policy.hpp"

namespace selfret::toy {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary policy checkpoint: magic "TPOL", u32 version, u64 config hash,
/// u32 vocab/image_dim/token_dim/max_len, u8 pretrained, u64 count, then
/// `count` little-endian f64 parameters.
void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy,
                     std::uint64_t config_hash);

/// Throws FormatError on a malformed or wrong-version file.
ToyPolicy load_checkpoint(const std::filesystem::path& path,
                          std::uint64_t* config_hash = nullptr);

}  // namespace selfret::toy
