#include "traceadapt/core/units.hpp"

#include <array>

namespace traceadapt {

namespace {

struct UnitRow {
  std::string_view name;
  std::string_view canonical;
  double multiplier;
  double divisor;
};

// Mass goes to kilograms. Counts and temperatures keep their own canonical unit.
constexpr std::array<UnitRow, 10> kUnits{{
    {"kg", "kg", 1.0, 1.0},
    {"g", "kg", 1.0, 1e3},
    {"mg", "kg", 1.0, 1e6},
    {"t", "kg", 1e3, 1.0},
    {"lb", "kg", 0.45359237, 1.0},
    {"oz", "kg", 0.028349523125, 1.0},
    {"ea", "ea", 1.0, 1.0},
    {"box", "box", 1.0, 1.0},
    {"celsius", "celsius", 1.0, 1.0},
    {"pct", "pct", 1.0, 1.0},
}};

const UnitRow* find(std::string_view unit) {
  for (const auto& row : kUnits) {
    if (row.name == unit) return &row;
  }
  return nullptr;
}

}  // namespace

std::optional<std::string> canonical_unit_for(std::string_view unit) {
  if (const auto* row = find(unit)) return std::string(row->canonical);
  return std::nullopt;
}

std::optional<Measurement> to_canonical_unit(double value, std::string_view unit) {
  const auto* row = find(unit);
  if (row == nullptr) return std::nullopt;
  return Measurement{value * row->multiplier / row->divisor, std::string(row->canonical)};
}

bool is_canonical_unit(std::string_view unit) {
  const auto* row = find(unit);
  return row != nullptr && row->name == row->canonical;
}

}  // namespace traceadapt
