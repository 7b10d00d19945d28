#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace traceadapt {

/// A single rejected field or line. `locus` is a field path such as
/// `epc_list[2]` or `line 7`, and `message` always repeats it.
struct ValidationError {
  std::string code;
  std::string message;
  std::string locus;

  bool operator==(const ValidationError&) const = default;
};

ValidationError make_error(std::string code, std::string locus, const std::string& detail);

nlohmann::json to_json(const ValidationError& e);
nlohmann::json to_json(const std::vector<ValidationError>& errors);
std::vector<ValidationError> errors_from_json(const nlohmann::json& j);

}  // namespace traceadapt
