#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace tabcpt {

// FNV-1a, 64-bit. Stable across platforms and releases; used for content
// hashes (contamination scan), checkpoint integrity and curation stamps.
class Digest64 {
 public:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

  Digest64& update(std::span<const std::byte> bytes) noexcept {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= kPrime;
    }
    return *this;
  }

  Digest64& update(std::string_view text) noexcept {
    return update(std::as_bytes(std::span<const char>(text.data(), text.size())));
  }

  Digest64& update_u64(std::uint64_t value) noexcept {
    for (int i = 0; i < 8; ++i) {
      state_ ^= (value >> (8 * i)) & 0xffU;
      state_ *= kPrime;
    }
    return *this;
  }

  std::uint64_t value() const noexcept { return state_; }

 private:
  std::uint64_t state_ = kOffset;
};

inline std::uint64_t digest64(std::string_view text) noexcept { return Digest64().update(text).value(); }

std::uint64_t digest_doubles(std::span<const double> values) noexcept;

std::string to_hex(std::uint64_t value);
std::uint64_t from_hex(std::string_view text);

}  // namespace tabcpt
