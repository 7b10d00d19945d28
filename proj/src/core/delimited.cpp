#include "traceadapt/core/delimited.hpp"

#include <charconv>
#include <cmath>

namespace traceadapt {

std::optional<ColumnType> parse_column_type(std::string_view text) {
  if (text == "string") return ColumnType::String;
  if (text == "number") return ColumnType::Number;
  if (text == "integer") return ColumnType::Integer;
  return std::nullopt;
}

std::optional<std::vector<std::string>> split_delimited(std::string_view line, char delimiter) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"' && fields.back().empty()) {
      quoted = true;
    } else if (c == delimiter) {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) return std::nullopt;
  return fields;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::variant<nlohmann::json, std::vector<ValidationError>> parse_delimited_row(std::string_view line,
                                                                                const FileSpec& spec,
                                                                                const std::string& locus) {
  auto fields = split_delimited(line, spec.delimiter);
  if (!fields) return std::vector{make_error("unterminated_quote", locus, "unterminated quoted field")};
  if (fields->size() != spec.columns.size()) {
    return std::vector{make_error("column_mismatch", locus,
                                  "expected " + std::to_string(spec.columns.size()) + " columns, found " +
                                      std::to_string(fields->size()))};
  }
  std::vector<ValidationError> errors;
  auto row = nlohmann::json::object();
  for (std::size_t i = 0; i < spec.columns.size(); ++i) {
    const auto& col = spec.columns[i];
    auto text = trim((*fields)[i]);
    auto where = locus + ", column " + col.name;
    if (text.empty()) {
      if (col.required) errors.push_back(make_error("missing_field", where, "value required"));
      continue;
    }
    switch (col.type) {
      case ColumnType::String:
        row[col.name] = std::string(text);
        break;
      case ColumnType::Integer: {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || p != text.data() + text.size()) {
          errors.push_back(make_error("bad_value", where, "'" + std::string(text) + "' is not an integer"));
        } else {
          row[col.name] = v;
        }
        break;
      }
      case ColumnType::Number: {
        // Decimal commas are common in regional spreadsheet exports.
        std::string owned(text);
        if (spec.delimiter != ',') {
          for (auto& c : owned) c = c == ',' ? '.' : c;
        }
        double v = 0;
        auto [p, ec] = std::from_chars(owned.data(), owned.data() + owned.size(), v);
        if (ec != std::errc{} || p != owned.data() + owned.size() || !std::isfinite(v)) {
          errors.push_back(make_error("bad_value", where, "'" + std::string(text) + "' is not a number"));
        } else {
          row[col.name] = v;
        }
        break;
      }
    }
  }
  if (!errors.empty()) return errors;
  return row;
}

}  // namespace traceadapt
