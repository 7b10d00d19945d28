#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace traceadapt {

struct Measurement {
  double value;
  std::string unit;
};

/// Canonical unit for the dimension `unit` belongs to (mass is kilograms), or
/// nullopt when the unit is unknown.
std::optional<std::string> canonical_unit_for(std::string_view unit);

/// Converts to the canonical unit of the same dimension.
std::optional<Measurement> to_canonical_unit(double value, std::string_view unit);

bool is_canonical_unit(std::string_view unit);

}  // namespace traceadapt
