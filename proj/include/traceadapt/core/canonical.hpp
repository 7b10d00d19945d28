#pragma once

#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace traceadapt {

class CanonicalizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic byte rendering of a JSON value.
///
/// Object keys are sorted by code point, there is no insignificant whitespace,
/// strings are UTF-8 with the minimal JSON escapes, and numbers have one form:
/// integral values (including integral floats inside the 64-bit range) print as
/// integers, everything else as the shortest round-trip decimal. Two values that
/// differ only in key order or whitespace of their source text canonicalize to
/// the same bytes.
///
/// Throws CanonicalizationError for non-finite numbers, invalid UTF-8, and
/// binary values.
std::string canonicalize(const nlohmann::json& value);

}  // namespace traceadapt
