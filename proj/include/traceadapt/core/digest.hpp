#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace traceadapt {

using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256(std::string_view bytes);
std::string sha256_hex(std::string_view bytes);
std::string to_hex(const std::uint8_t* data, std::size_t size);

/// SHA-256 of an event's canonical serialization, used to suppress duplicate
/// ledger commits.
class IdempotencyKey {
 public:
  explicit IdempotencyKey(const Sha256& digest) : digest_(digest) {}

  /// Accepts exactly 64 lowercase hex characters.
  static std::optional<IdempotencyKey> from_hex(std::string_view hex);

  const Sha256& digest() const noexcept { return digest_; }
  std::string hex() const { return to_hex(digest_.data(), digest_.size()); }

  auto operator<=>(const IdempotencyKey&) const = default;

 private:
  Sha256 digest_;
};

IdempotencyKey compute_idempotency_key(std::string_view canonical_bytes);

}  // namespace traceadapt

template <>
struct std::hash<traceadapt::IdempotencyKey> {
  std::size_t operator()(const traceadapt::IdempotencyKey& k) const noexcept {
    std::size_t h = 0;
    for (int i = 0; i < 8; ++i) h = (h << 8) | k.digest()[i];
    return h;
  }
};
