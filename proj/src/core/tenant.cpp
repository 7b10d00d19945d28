#include "traceadapt/core/tenant.hpp"

namespace traceadapt {

bool TenantId::is_valid(std::string_view text) {
  if (text.empty() || text.size() > 64) return false;
  for (char c : text) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
    if (!ok) return false;
  }
  return true;
}

}  // namespace traceadapt
