#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "traceadapt/orchestrator/app.hpp"
#include "traceadapt/orchestrator/config.hpp"
#include "traceadapt/orchestrator/server.hpp"

namespace traceadapt::orchestrator {

struct HttpReply {
  int status = 0;  ///< 0 when no HTTP answer came back
  nlohmann::json body;
  std::map<std::string, std::string> headers;
};

/// A throwaway deployment of a config: fresh data directory, one extra
/// credential per tenant for the harness, every poll source pointed at an
/// in-process farm listing, and the HTTP server on a free port.
class Session {
 public:
  explicit Session(PipelineConfig config, std::filesystem::path work_dir = {});
  ~Session();

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  App& app() { return *app_; }
  std::string base_url() const;
  const std::filesystem::path& work_dir() const { return work_dir_; }

  std::string username(const std::string& tenant) const;
  std::string api_key(const std::string& tenant) const;

  HttpReply post(const std::string& tenant, const std::string& path, const std::string& body);
  HttpReply post_as(const std::optional<std::string>& username, const std::optional<std::string>& api_key,
                    const std::string& path, const std::string& body);
  HttpReply get(const std::string& tenant, const std::string& path);
  HttpReply upload(const std::string& tenant, const std::string& file_name, const std::string& content);

  /// Replaces the rows the farm listing serves.
  void set_farm_rows(nlohmann::json rows);
  /// Requests the given tenant has made so far, in any state.
  std::vector<status::RequestStatus> requests(const std::string& tenant) const;
  /// Waits for the request to reach Confirmed or Failed.
  std::optional<status::RequestStatus> settle(const std::string& request_id,
                                              std::chrono::milliseconds timeout = std::chrono::seconds(30));

 private:
  struct Farm;
  std::filesystem::path work_dir_;
  bool owns_dir_ = false;
  std::map<std::string, std::pair<std::string, std::string>> callers_;
  std::unique_ptr<Farm> farm_;
  std::unique_ptr<App> app_;
  std::unique_ptr<HttpServer> server_;
};

/// Farm listing rows for the bundled three-organization fixture.
nlohmann::json journey_farm_rows();

/// Drives the rest of the fixture through the HTTP surface: factory intake,
/// one transformation into a product lot, its shipment, and the retailer's
/// arrival file. Returns the product EPC. Every request must confirm.
std::string seed_journey(Session& s, std::chrono::milliseconds timeout = std::chrono::seconds(60));

/// Journey by exhaustive scan of every block the caller can read.
std::vector<ledger::JourneyEntry> journey_oracle(const ledger::Ledger& ledger, const std::string& epc,
                                                 const TenantId& caller);

/// Every stored message or ledger entry that sits outside its tenant's
/// topics or channels. Empty means isolated.
std::vector<std::string> isolation_violations(App& app);

struct Check {
  std::string row;
  std::string name;
  bool ok = false;
  std::string detail;
};

struct VerifyOptions {
  /// "duplicate-flood" or "cross-tenant".
  std::string inject_fault;
  std::filesystem::path work_dir;
  std::size_t duplicate_copies = 5;
};

struct VerifyReport {
  std::vector<Check> checks;
  std::uint64_t duplicates_suppressed = 0;

  bool passed() const;
  nlohmann::json to_json() const;
};

/// The functional matrix: auth, input validation, transformation, routing
/// and duplicate writing, end to end against a fresh deployment of `config`.
VerifyReport run_verify(PipelineConfig config, const VerifyOptions& options = {});

}  // namespace traceadapt::orchestrator
