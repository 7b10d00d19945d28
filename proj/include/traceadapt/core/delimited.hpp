#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "traceadapt/core/validation.hpp"

namespace traceadapt {

enum class ColumnType { String, Number, Integer };

std::optional<ColumnType> parse_column_type(std::string_view text);

struct ColumnSpec {
  std::string name;
  ColumnType type = ColumnType::String;
  bool required = true;
};

/// Layout of a delimited daily file.
struct FileSpec {
  char delimiter = ',';
  std::size_t header_rows = 0;
  std::string comment_prefix;
  std::vector<ColumnSpec> columns;
};

/// Splits one line on `delimiter`. Fields may be double-quoted; `""` inside a
/// quoted field is a literal quote. Returns nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_delimited(std::string_view line, char delimiter);

/// Parses a data line into an object keyed by column name, typed per the
/// spec. Every error locus starts with `locus`.
std::variant<nlohmann::json, std::vector<ValidationError>> parse_delimited_row(std::string_view line,
                                                                                const FileSpec& spec,
                                                                                const std::string& locus);

/// A configuration problem, located by its YAML path (e.g. `tenants[2].id`).
struct ConfigError {
  std::string path;
  std::string message;

  bool operator==(const ConfigError&) const = default;
};

}  // namespace traceadapt
