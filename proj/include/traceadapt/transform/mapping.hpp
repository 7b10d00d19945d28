#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "traceadapt/core/delimited.hpp"
#include "traceadapt/core/event.hpp"
#include "traceadapt/core/raw_record.hpp"
#include "traceadapt/core/tenant.hpp"

namespace YAML {
class Node;
}

namespace traceadapt::transform {

/// Copies one or more source values into a canonical field. With several
/// `from` paths, or a `format`, the values are rendered into the template;
/// `{}` takes the next value and `{N}` the N-th.
struct FieldMap {
  std::string field;              ///< e.g. `epc_list`, `event_time`, `attributes.weight`
  std::vector<std::string> from;  ///< source paths such as `lot.id` or `items[0]`
  std::string format;
  bool optional = false;
};

/// Declares the unit of a numeric attribute so it can be converted to the
/// canonical unit. Exactly one of the two sources is set.
struct UnitRule {
  std::string field;
  std::string from_unit;
  std::string unit_from;
};

/// Parses a time field with a strptime format at a fixed UTC offset; without
/// a rule, time fields are read as ISO-8601.
struct TimeRule {
  std::string field;
  std::string format;
  std::chrono::minutes utc_offset{0};
};

struct MappingSpec {
  std::string name;
  TenantId tenant{"unknown"};
  SourceKind source_kind = SourceKind::HttpPush;
  /// Empty matches any source of the kind.
  std::string source_name;
  std::vector<FieldMap> field_maps;
  /// Canonical field -> fixed value.
  std::vector<std::pair<std::string, nlohmann::json>> constants;
  std::vector<UnitRule> unit_rules;
  std::vector<TimeRule> time_rules;
  std::optional<FileSpec> filespec;
};

/// `base` is the YAML path of `node`, used to locate errors.
std::variant<MappingSpec, std::vector<ConfigError>> load_mapping_spec(const YAML::Node& node,
                                                                      const std::string& base = "");
std::variant<MappingSpec, std::vector<ConfigError>> load_mapping_spec(const std::string& yaml_text);

std::variant<FileSpec, std::vector<ConfigError>> load_filespec(const YAML::Node& node, const std::string& base);

struct TransformOutcome {
  std::string request_id;
  std::variant<CanonicalEvent, std::vector<ValidationError>> result;

  bool ok() const { return std::holds_alternative<CanonicalEvent>(result); }
};

/// Builds the source document: the payload object itself, or a delimited line
/// split per the spec's filespec.
std::variant<nlohmann::json, std::vector<ValidationError>> source_document(const RawRecord& record,
                                                                           const MappingSpec& spec);

/// Deterministic: the same record and spec always give the same event bytes.
TransformOutcome apply_mapping(const RawRecord& record, const MappingSpec& spec, const EventRules& rules = {});

/// Resolves `a.b[2].c` inside `doc`.
const nlohmann::json* lookup_path(const nlohmann::json& doc, std::string_view path);

/// Specs for every tenant; picks the most specific match for a record.
class MappingRegistry {
 public:
  MappingRegistry() = default;
  explicit MappingRegistry(std::vector<MappingSpec> specs) : specs_(std::move(specs)) {}

  void add(MappingSpec spec) { specs_.push_back(std::move(spec)); }
  const MappingSpec* select(const TenantId& tenant, SourceKind kind, const std::string& source_name) const;
  const std::vector<MappingSpec>& specs() const { return specs_; }

 private:
  std::vector<MappingSpec> specs_;
};

}  // namespace traceadapt::transform
