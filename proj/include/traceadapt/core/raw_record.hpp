#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "traceadapt/core/tenant.hpp"
#include "traceadapt/core/time.hpp"

namespace traceadapt {

enum class SourceKind { HttpPush, FileDrop, Poll };
enum class ContentType { StructuredObject, DelimitedLine };

std::string_view to_string(SourceKind k);
std::optional<SourceKind> parse_source_kind(std::string_view text);
std::string_view to_string(ContentType c);
std::optional<ContentType> parse_content_type(std::string_view text);

/// An ingested payload with its provenance, before transformation.
///
/// `source_name` narrows `source_kind` to the concrete ingress (push endpoint
/// path, upload filespec name, or poll source id) so the transformer can pick
/// the mapping for that payload shape.
struct RawRecord {
  std::string request_id;
  TenantId tenant;
  SourceKind source_kind = SourceKind::HttpPush;
  std::string source_name;
  Timestamp received_at{};
  ContentType content_type = ContentType::StructuredObject;
  std::string payload;
};

nlohmann::json to_json(const RawRecord& r);

/// Throws std::invalid_argument on a malformed record.
RawRecord raw_record_from_json(const nlohmann::json& j);

/// Random RFC 4122 version-4 identifier.
std::string new_request_id();

}  // namespace traceadapt
