#include "tabcpt/digest.hpp"

#include <bit>
#include <charconv>

#include "tabcpt/error.hpp"

namespace tabcpt {

std::uint64_t digest_doubles(std::span<const double> values) noexcept {
  Digest64 digest;
  for (double v : values) digest.update_u64(std::bit_cast<std::uint64_t>(v));
  return digest.value();
}

std::string to_hex(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xfU];
    value >>= 4;
  }
  return out;
}

std::uint64_t from_hex(std::string_view text) {
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, 16);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw input_error("invalid hex digest '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace tabcpt
