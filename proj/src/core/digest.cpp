#include "traceadapt/core/digest.hpp"

#include <openssl/sha.h>

namespace traceadapt {

Sha256 sha256(std::string_view bytes) {
  Sha256 out{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), out.data());
  return out;
}

std::string to_hex(const std::uint8_t* data, std::size_t size) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(size * 2, '0');
  for (std::size_t i = 0; i < size; ++i) {
    out[2 * i] = kHex[data[i] >> 4];
    out[2 * i + 1] = kHex[data[i] & 0xF];
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  auto d = sha256(bytes);
  return to_hex(d.data(), d.size());
}

std::optional<IdempotencyKey> IdempotencyKey::from_hex(std::string_view hex) {
  if (hex.size() != 64) return std::nullopt;
  Sha256 d{};
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
  };
  for (std::size_t i = 0; i < 32; ++i) {
    int hi = nibble(hex[2 * i]);
    int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    d[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return IdempotencyKey(d);
}

IdempotencyKey compute_idempotency_key(std::string_view canonical_bytes) {
  return IdempotencyKey(sha256(canonical_bytes));
}

}  // namespace traceadapt
