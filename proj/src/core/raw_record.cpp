#include "traceadapt/core/raw_record.hpp"

#include <random>

#include "traceadapt/core/digest.hpp"

namespace traceadapt {

std::string_view to_string(SourceKind k) {
  switch (k) {
    case SourceKind::HttpPush: return "http_push";
    case SourceKind::FileDrop: return "file_drop";
    case SourceKind::Poll: return "poll";
  }
  return "http_push";
}

std::optional<SourceKind> parse_source_kind(std::string_view text) {
  if (text == "http_push") return SourceKind::HttpPush;
  if (text == "file_drop") return SourceKind::FileDrop;
  if (text == "poll") return SourceKind::Poll;
  return std::nullopt;
}

std::string_view to_string(ContentType c) {
  return c == ContentType::StructuredObject ? "structured_object" : "delimited_line";
}

std::optional<ContentType> parse_content_type(std::string_view text) {
  if (text == "structured_object") return ContentType::StructuredObject;
  if (text == "delimited_line") return ContentType::DelimitedLine;
  return std::nullopt;
}

nlohmann::json to_json(const RawRecord& r) {
  return {{"request_id", r.request_id},
          {"tenant", r.tenant.str()},
          {"source_kind", to_string(r.source_kind)},
          {"source_name", r.source_name},
          {"received_at", format_utc(r.received_at)},
          {"content_type", to_string(r.content_type)},
          {"payload", r.payload}};
}

RawRecord raw_record_from_json(const nlohmann::json& j) {
  auto kind = parse_source_kind(j.at("source_kind").get<std::string>());
  auto content = parse_content_type(j.at("content_type").get<std::string>());
  auto received = parse_iso8601(j.at("received_at").get<std::string>());
  if (!kind || !content || !received) throw std::invalid_argument("malformed raw record");
  RawRecord r{j.at("request_id").get<std::string>(),
              TenantId(j.at("tenant").get<std::string>()),
              *kind,
              j.value("source_name", ""),
              *received,
              *content,
              j.at("payload").get<std::string>()};
  if (r.request_id.empty() || r.payload.empty()) throw std::invalid_argument("malformed raw record");
  return r;
}

std::string new_request_id() {
  thread_local std::mt19937_64 rng{std::random_device{}() ^
                                   (static_cast<std::uint64_t>(std::random_device{}()) << 32)};
  std::array<std::uint8_t, 16> b{};
  for (int i = 0; i < 16; i += 8) {
    auto v = rng();
    for (int k = 0; k < 8; ++k) b[i + k] = static_cast<std::uint8_t>(v >> (8 * k));
  }
  b[6] = static_cast<std::uint8_t>((b[6] & 0x0F) | 0x40);
  b[8] = static_cast<std::uint8_t>((b[8] & 0x3F) | 0x80);
  std::string hex = to_hex(b.data(), b.size());
  return hex.substr(0, 8) + "-" + hex.substr(8, 4) + "-" + hex.substr(12, 4) + "-" +
         hex.substr(16, 4) + "-" + hex.substr(20);
}

}  // namespace traceadapt
