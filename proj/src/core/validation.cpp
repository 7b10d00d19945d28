#include "traceadapt/core/validation.hpp"

namespace traceadapt {

ValidationError make_error(std::string code, std::string locus, const std::string& detail) {
  std::string message = locus + ": " + detail;
  return ValidationError{std::move(code), std::move(message), std::move(locus)};
}

nlohmann::json to_json(const ValidationError& e) {
  return {{"code", e.code}, {"message", e.message}, {"locus", e.locus}};
}

nlohmann::json to_json(const std::vector<ValidationError>& errors) {
  auto arr = nlohmann::json::array();
  for (const auto& e : errors) arr.push_back(to_json(e));
  return arr;
}

std::vector<ValidationError> errors_from_json(const nlohmann::json& j) {
  std::vector<ValidationError> out;
  if (!j.is_array()) return out;
  for (const auto& e : j) {
    out.push_back({e.value("code", ""), e.value("message", ""), e.value("locus", "")});
  }
  return out;
}

}  // namespace traceadapt
