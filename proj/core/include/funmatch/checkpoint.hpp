#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "funmatch/model.hpp"

namespace funmatch {

/// On-disk layout:
///   "FMCK" | u8 version (=1) | u32 LE manifest length | UTF-8 JSON manifest | f32 LE payloads
/// The manifest is {config, step, seed, tensors: [{name, shape, offset, len}]}
/// with byte offsets relative to the start of the payload section.
struct Checkpoint {
  static constexpr std::uint8_t kVersion = 1;

  ModelConfig config;
  Parameters<float> params;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  /// Tensors that are not model parameters (optimizer state), stored after them.
  std::vector<NamedTensor<float>> extra;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Throws FormatError (bad_magic, version_mismatch, truncated, malformed) or IoError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace funmatch
