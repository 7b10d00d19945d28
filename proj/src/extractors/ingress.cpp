#include "traceadapt/extractors/ingress.hpp"

#include <spdlog/spdlog.h>

namespace traceadapt::extractors {

using nlohmann::json;

json error_body(const ValidationError& e) { return {{"error", to_json(e)}}; }

namespace {

Reply error_reply(int status, const ValidationError& e) { return Reply{status, error_body(e), {}}; }

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

ValidationError parse_error_at(std::string_view body, const json::parse_error& e) {
  // nlohmann reports the 1-based byte offset of the failure.
  std::size_t byte = e.byte == 0 ? 0 : e.byte - 1;
  std::size_t line = 1, column = 1;
  for (std::size_t i = 0; i < byte && i < body.size(); ++i) {
    if (body[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  std::string detail = e.what();
  if (auto p = detail.find("parse error"); p != std::string::npos) detail = detail.substr(p);
  return make_error("unparsable", "body line " + std::to_string(line) + ", column " + std::to_string(column), detail);
}

}  // namespace

DailyFile parse_daily_file(std::string_view bytes, const FileSpec& spec, const TenantId& tenant,
                           const std::string& source_name) {
  DailyFile out;
  const auto received = now_utc();
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < bytes.size()) {
    auto nl = bytes.find('\n', start);
    auto end = nl == std::string_view::npos ? bytes.size() : nl;
    auto line = bytes.substr(start, end - start);
    start = end + 1;
    ++line_no;
    ++out.total_lines;
    if (line_no <= spec.header_rows || is_blank(line) ||
        (!spec.comment_prefix.empty() && line.substr(0, spec.comment_prefix.size()) == spec.comment_prefix)) {
      ++out.skipped;
      continue;
    }
    auto row = parse_delimited_row(line, spec, "line " + std::to_string(line_no));
    if (auto* errs = std::get_if<std::vector<ValidationError>>(&row)) {
      out.rejected.emplace_back(line_no, errs->front());
      continue;
    }
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.records.push_back(RawRecord{new_request_id(), tenant, SourceKind::FileDrop, source_name, received,
                                    ContentType::DelimitedLine, std::string(line)});
    out.record_lines.push_back(line_no);
  }
  if (out.records.empty() && out.rejected.empty()) out.warnings.push_back("file contains no data lines");
  return out;
}

IngressService::IngressService(broker::Broker& broker, status::StatusStore& status,
                               const CredentialStore& credentials, const transform::MappingRegistry& mappings,
                               IngressOptions options)
    : broker_(broker), status_(status), credentials_(credentials), mappings_(mappings), options_(options) {}

std::variant<TenantId, Reply> IngressService::authorize(const std::optional<std::string>& username,
                                                        const std::optional<std::string>& api_key) const {
  auto auth = credentials_.authenticate(username, api_key);
  if (auto* t = std::get_if<TenantId>(&auth)) return *t;
  auto failure = std::get<AuthFailure>(auth);
  if (failure == AuthFailure::MissingCredentials) {
    return error_reply(401, make_error("missing_credentials", "headers",
                                       "X-Username and X-Api-Key headers are required"));
  }
  return error_reply(401, make_error("invalid_credentials", "headers", "unknown username or wrong API key"));
}

std::optional<Reply> IngressService::check_body(const TenantId& tenant, const std::string& endpoint,
                                                std::string_view body, json& parsed) const {
  if (body.size() > options_.max_body_bytes) {
    return error_reply(413, make_error("payload_too_large", "body",
                                       std::to_string(body.size()) + " bytes exceeds the limit of " +
                                           std::to_string(options_.max_body_bytes)));
  }
  try {
    parsed = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_reply(400, parse_error_at(body, e));
  }
  if (!parsed.is_object()) return error_reply(400, make_error("bad_value", "body", "body must be a JSON object"));

  if (const auto* spec = mappings_.select(tenant, SourceKind::HttpPush, endpoint)) {
    std::vector<ValidationError> missing;
    for (const auto& fm : spec->field_maps) {
      if (fm.optional) continue;
      for (const auto& path : fm.from) {
        const auto* v = transform::lookup_path(parsed, path);
        if (v == nullptr || v->is_null()) missing.push_back(make_error("missing_field", path, "required field missing"));
      }
    }
    if (!missing.empty()) {
      Reply r = error_reply(400, missing.front());
      r.body["errors"] = to_json(missing);
      return r;
    }
  }
  return std::nullopt;
}

Reply IngressService::backpressure_reply() const {
  Reply r = error_reply(503, make_error("backpressure", "broker", "pipeline is saturated, retry later"));
  r.headers["Retry-After"] = std::to_string(options_.retry_after.count());
  return r;
}

bool IngressService::enqueue(const RawRecord& record) {
  auto received = status_.record_received(record.request_id, record.tenant, std::string(to_string(record.source_kind)));
  if (!std::holds_alternative<status::RequestStatus>(received)) {
    throw std::runtime_error("request id collision: " + record.request_id);
  }
  auto result = broker_.append(record.tenant.str() + ".raw", record.request_id, to_json(record).dump());
  if (std::holds_alternative<std::uint64_t>(result)) return true;
  status_.record(record.request_id, {status::State::Failed, "backpressure", {}, {}, {}});
  return false;
}

Reply IngressService::push(const std::string& endpoint, const std::optional<std::string>& username,
                           const std::optional<std::string>& api_key, std::string_view body) {
  auto who = authorize(username, api_key);
  if (auto* r = std::get_if<Reply>(&who)) return *r;
  const auto& tenant = std::get<TenantId>(who);
  json parsed;
  if (auto bad = check_body(tenant, endpoint, body, parsed)) return *bad;

  RawRecord record{new_request_id(), tenant, SourceKind::HttpPush, endpoint, now_utc(),
                   ContentType::StructuredObject, std::string(body)};
  if (!enqueue(record)) return backpressure_reply();
  return Reply{202, {{"request_id", record.request_id}}, {}};
}

Reply IngressService::direct(const std::string& endpoint, const std::optional<std::string>& username,
                             const std::optional<std::string>& api_key, std::string_view body) {
  auto who = authorize(username, api_key);
  if (auto* r = std::get_if<Reply>(&who)) return *r;
  json parsed;
  if (auto bad = check_body(std::get<TenantId>(who), endpoint, body, parsed)) return *bad;
  RawRecord record{new_request_id(), std::get<TenantId>(who), SourceKind::HttpPush, endpoint, now_utc(),
                   ContentType::StructuredObject, std::string(body)};
  auto serialized = to_json(record).dump();
  return Reply{202, {{"request_id", record.request_id}, {"bytes", serialized.size()}}, {}};
}

Reply IngressService::upload(const std::optional<std::string>& username, const std::optional<std::string>& api_key,
                             const std::string& file_name, std::string_view bytes, const std::string& source) {
  auto who = authorize(username, api_key);
  if (auto* r = std::get_if<Reply>(&who)) return *r;
  const auto& tenant = std::get<TenantId>(who);
  if (bytes.empty()) return error_reply(400, make_error("empty_file", "file", "uploaded file is empty"));
  if (bytes.size() > options_.max_body_bytes) {
    return error_reply(413, make_error("payload_too_large", "file", "file exceeds the upload limit"));
  }
  const transform::MappingSpec* spec = nullptr;
  for (const auto& s : mappings_.specs()) {
    if (s.tenant == tenant && s.source_kind == SourceKind::FileDrop && s.filespec &&
        (source.empty() || s.source_name == source)) {
      spec = &s;
      break;
    }
  }
  if (spec == nullptr) {
    return error_reply(400, make_error("no_filespec", "source", "no file layout configured for this tenant"));
  }

  auto parsed = parse_daily_file(bytes, *spec->filespec, tenant, spec->source_name);
  json receipt = {{"file_name", file_name},
                  {"request_ids", json::array()},
                  {"accepted", json::array()},
                  {"rejected", json::array()},
                  {"skipped", parsed.skipped},
                  {"total_lines", parsed.total_lines},
                  {"warnings", parsed.warnings}};
  for (const auto& [line, err] : parsed.rejected) {
    receipt["rejected"].push_back({{"line", line}, {"error", to_json(err)}});
  }
  bool saturated = false;
  for (std::size_t i = 0; i < parsed.records.size(); ++i) {
    auto line = parsed.record_lines[i];
    if (saturated || !enqueue(parsed.records[i])) {
      saturated = true;
      receipt["rejected"].push_back(
          {{"line", line},
           {"error", to_json(make_error("backpressure", "line " + std::to_string(line), "pipeline is saturated"))}});
      continue;
    }
    receipt["request_ids"].push_back(parsed.records[i].request_id);
    receipt["accepted"].push_back({{"line", line}, {"request_id", parsed.records[i].request_id}});
  }
  if (saturated) {
    auto r = backpressure_reply();
    r.body["receipt"] = receipt;
    return r;
  }
  return Reply{202, receipt, {}};
}

}  // namespace traceadapt::extractors
