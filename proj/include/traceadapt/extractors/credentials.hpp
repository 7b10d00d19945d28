#pragma once

#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <variant>

#include "traceadapt/core/tenant.hpp"

namespace traceadapt::extractors {

inline constexpr int kMinHashCost = 1;
inline constexpr int kMaxHashCost = 24;

/// Salted PBKDF2-HMAC-SHA256 with 2^cost iterations, encoded as
/// `$pbkdf2-sha256$<cost>$<salt hex>$<digest hex>`. Throws
/// std::invalid_argument for a cost outside [kMinHashCost, kMaxHashCost].
std::string hash_credential(std::string_view plaintext_key, int cost);

/// False for a wrong key or a malformed stored hash.
bool verify_credential(std::string_view plaintext_key, std::string_view key_hash);

struct Credential {
  std::string username;
  std::string key_hash;
  TenantId tenant;
  int hash_cost = 0;
};

enum class AuthFailure { MissingCredentials, InvalidCredentials };

std::string_view to_string(AuthFailure f);

/// Username -> credential. Read-mostly; verification runs outside the lock.
class CredentialStore {
 public:
  /// Throws std::invalid_argument when the username is taken.
  void add(Credential c);
  /// Hashes `plaintext_key` at `cost` and stores only the hash.
  void add_plaintext(const std::string& username, std::string_view plaintext_key, const TenantId& tenant, int cost);

  std::variant<TenantId, AuthFailure> authenticate(const std::optional<std::string>& username,
                                                   const std::optional<std::string>& api_key) const;

  std::optional<Credential> find(const std::string& username) const;
  std::size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, Credential> by_user_;
};

}  // namespace traceadapt::extractors
