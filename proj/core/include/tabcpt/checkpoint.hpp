#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tabcpt/model.hpp"

namespace tabcpt {

enum class Stage : std::uint8_t { base = 0, continued = 1 };

const char* to_string(Stage stage);

struct Checkpoint {
  ModelConfig model;
  std::vector<double> params;
  Stage stage = Stage::base;
  std::uint64_t steps = 0;
  std::uint64_t anchor_digest = 0;  // digest of w0 for continued checkpoints, 0 for base
  std::uint64_t seed = 0;

  bool operator==(const Checkpoint&) const = default;
};

// File layout, all integers little-endian:
//   magic "TABCPTCK" | u32 version | ModelConfig (7 x u64) | u8 stage |
//   u64 steps | u64 anchor digest | u64 seed | u64 n_params |
//   n_params x f64 | u64 FNV-1a digest of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);

/// Throws input errors on bad magic, version mismatch, truncation, digest
/// mismatch, or (when `expected` is given) a different model configuration.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                                  const std::optional<ModelConfig>& expected = std::nullopt);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace tabcpt
