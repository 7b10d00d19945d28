#include "traceadapt/extractors/credentials.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <mutex>
#include <stdexcept>
#include <vector>

#include "traceadapt/core/digest.hpp"

namespace traceadapt::extractors {

namespace {

constexpr std::string_view kScheme = "$pbkdf2-sha256$";
constexpr std::size_t kSaltBytes = 16;
constexpr std::size_t kDigestBytes = 32;

std::vector<std::uint8_t> derive(std::string_view key, const std::vector<std::uint8_t>& salt, int cost) {
  std::vector<std::uint8_t> out(kDigestBytes);
  if (PKCS5_PBKDF2_HMAC(key.data(), static_cast<int>(key.size()), salt.data(), static_cast<int>(salt.size()),
                        1 << cost, EVP_sha256(), static_cast<int>(out.size()), out.data()) != 1) {
    throw std::runtime_error("PBKDF2 failed");
  }
  return out;
}

std::optional<std::vector<std::uint8_t>> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) return std::nullopt;
  std::vector<std::uint8_t> out;
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
  };
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = nibble(hex[i]), lo = nibble(hex[i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out.push_back(static_cast<std::uint8_t>(hi * 16 + lo));
  }
  return out;
}

}  // namespace

std::string hash_credential(std::string_view plaintext_key, int cost) {
  if (cost < kMinHashCost || cost > kMaxHashCost) {
    throw std::invalid_argument("hash cost must be in [" + std::to_string(kMinHashCost) + ", " +
                                std::to_string(kMaxHashCost) + "]");
  }
  std::vector<std::uint8_t> salt(kSaltBytes);
  if (RAND_bytes(salt.data(), static_cast<int>(salt.size())) != 1) throw std::runtime_error("no entropy for salt");
  auto digest = derive(plaintext_key, salt, cost);
  return std::string(kScheme) + std::to_string(cost) + "$" + to_hex(salt.data(), salt.size()) + "$" +
         to_hex(digest.data(), digest.size());
}

bool verify_credential(std::string_view plaintext_key, std::string_view key_hash) {
  if (key_hash.substr(0, kScheme.size()) != kScheme) return false;
  auto rest = key_hash.substr(kScheme.size());
  auto d1 = rest.find('$');
  if (d1 == std::string_view::npos) return false;
  auto d2 = rest.find('$', d1 + 1);
  if (d2 == std::string_view::npos) return false;
  int cost = 0;
  try {
    std::size_t used = 0;
    cost = std::stoi(std::string(rest.substr(0, d1)), &used);
    if (used != d1) return false;
  } catch (const std::exception&) {
    return false;
  }
  if (cost < kMinHashCost || cost > kMaxHashCost) return false;
  auto salt = from_hex(rest.substr(d1 + 1, d2 - d1 - 1));
  auto expected = from_hex(rest.substr(d2 + 1));
  if (!salt || salt->empty() || !expected || expected->size() != kDigestBytes) return false;
  auto actual = derive(plaintext_key, *salt, cost);
  return CRYPTO_memcmp(actual.data(), expected->data(), kDigestBytes) == 0;
}

std::string_view to_string(AuthFailure f) {
  return f == AuthFailure::MissingCredentials ? "missing_credentials" : "invalid_credentials";
}

void CredentialStore::add(Credential c) {
  std::unique_lock lock(mu_);
  auto name = c.username;
  if (!by_user_.emplace(name, std::move(c)).second) {
    throw std::invalid_argument("username '" + name + "' already bound to a tenant");
  }
}

void CredentialStore::add_plaintext(const std::string& username, std::string_view plaintext_key,
                                    const TenantId& tenant, int cost) {
  add(Credential{username, hash_credential(plaintext_key, cost), tenant, cost});
}

std::variant<TenantId, AuthFailure> CredentialStore::authenticate(const std::optional<std::string>& username,
                                                                  const std::optional<std::string>& api_key) const {
  if (!username || username->empty() || !api_key || api_key->empty()) return AuthFailure::MissingCredentials;
  auto cred = find(*username);
  if (!cred) return AuthFailure::InvalidCredentials;
  if (!verify_credential(*api_key, cred->key_hash)) return AuthFailure::InvalidCredentials;
  return cred->tenant;
}

std::optional<Credential> CredentialStore::find(const std::string& username) const {
  std::shared_lock lock(mu_);
  auto it = by_user_.find(username);
  if (it == by_user_.end()) return std::nullopt;
  return it->second;
}

std::size_t CredentialStore::size() const {
  std::shared_lock lock(mu_);
  return by_user_.size();
}

}  // namespace traceadapt::extractors
