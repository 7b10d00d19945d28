#pragma once

#include <compare>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace traceadapt {

/// Organization identifier: lowercase alphanumerics and dashes, 1 to 64 chars.
class TenantId {
 public:
  static bool is_valid(std::string_view text);

  static std::optional<TenantId> parse(std::string_view text) {
    if (!is_valid(text)) return std::nullopt;
    return TenantId(std::string(text));
  }

  /// Throws std::invalid_argument on a malformed id.
  explicit TenantId(std::string id) : id_(std::move(id)) {
    if (!is_valid(id_)) throw std::invalid_argument("invalid tenant id '" + id_ + "'");
  }

  const std::string& str() const noexcept { return id_; }

  auto operator<=>(const TenantId&) const = default;

 private:
  std::string id_;
};

}  // namespace traceadapt

template <>
struct std::hash<traceadapt::TenantId> {
  std::size_t operator()(const traceadapt::TenantId& t) const noexcept {
    return std::hash<std::string>{}(t.str());
  }
};
