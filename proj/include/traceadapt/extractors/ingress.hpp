#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "traceadapt/broker/broker.hpp"
#include "traceadapt/core/delimited.hpp"
#include "traceadapt/core/raw_record.hpp"
#include "traceadapt/extractors/credentials.hpp"
#include "traceadapt/status/status.hpp"
#include "traceadapt/transform/mapping.hpp"

namespace traceadapt::extractors {

/// Transport-neutral HTTP reply.
struct Reply {
  int status = 200;
  nlohmann::json body;
  std::map<std::string, std::string> headers;
};

/// `{"error":{"code","message","locus"}}`.
nlohmann::json error_body(const ValidationError& e);

struct DailyFile {
  std::vector<RawRecord> records;
  std::vector<std::size_t> record_lines;  ///< 1-based line of each record
  std::vector<std::pair<std::size_t, ValidationError>> rejected;
  std::size_t skipped = 0;
  std::size_t total_lines = 0;
  std::vector<std::string> warnings;
};

/// Splits an uploaded file into one delimited_line record per data line.
/// Header rows, comment lines and blank lines are skipped; every other line
/// is either a record or a rejection. A final newline does not start a line.
DailyFile parse_daily_file(std::string_view bytes, const FileSpec& spec, const TenantId& tenant,
                           const std::string& source_name);

struct IngressOptions {
  std::size_t max_body_bytes = 1024 * 1024;
  std::chrono::seconds retry_after{1};
};

/// Push and upload ingress. Each accepted payload gets a request id, a
/// Received status and one append to the caller's own raw topic.
class IngressService {
 public:
  IngressService(broker::Broker& broker, status::StatusStore& status, const CredentialStore& credentials,
                 const transform::MappingRegistry& mappings, IngressOptions options = {});

  /// POST /entryBatch, /manageBatches, /exitBatch. `endpoint` is the path
  /// without its slash.
  Reply push(const std::string& endpoint, const std::optional<std::string>& username,
             const std::optional<std::string>& api_key, std::string_view body);

  /// POST /upload. `source` picks the tenant's file_drop mapping; empty
  /// selects the first one.
  Reply upload(const std::optional<std::string>& username, const std::optional<std::string>& api_key,
               const std::string& file_name, std::string_view bytes, const std::string& source = {});

  /// The push path up to the RawRecord, without broker or status. Used as the
  /// baseline when measuring queue overhead.
  Reply direct(const std::string& endpoint, const std::optional<std::string>& username,
               const std::optional<std::string>& api_key, std::string_view body);

 private:
  std::variant<TenantId, Reply> authorize(const std::optional<std::string>& username,
                                          const std::optional<std::string>& api_key) const;
  std::optional<Reply> check_body(const TenantId& tenant, const std::string& endpoint, std::string_view body,
                                  nlohmann::json& parsed) const;
  /// Records Received then appends; on back-pressure marks the request Failed.
  bool enqueue(const RawRecord& record);
  Reply backpressure_reply() const;

  broker::Broker& broker_;
  status::StatusStore& status_;
  const CredentialStore& credentials_;
  const transform::MappingRegistry& mappings_;
  IngressOptions options_;
};

}  // namespace traceadapt::extractors
