#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace traceadapt::orchestrator {

struct LoadgenOptions {
  std::string base_url = "http://127.0.0.1:8080";
  std::string path = "/entryBatch";
  double rate = 100;  ///< requests per second, open loop
  std::chrono::milliseconds duration{60'000};
  std::size_t payload_size = 512;
  std::string username;
  std::string api_key;
  std::size_t concurrency = 32;
  bool verify = false;
  std::chrono::milliseconds verify_timeout{300'000};
  std::string run_id;  ///< prefix that keeps payloads unique across runs; random when empty
};

struct LatencySummary {
  std::size_t samples = 0;
  double avg_ms = 0;
  double p50_ms = 0;
  double p95_ms = 0;
  double p99_ms = 0;
  double max_ms = 0;
};

LatencySummary summarize(std::vector<double> samples_ms);

struct LoadReport {
  std::string path;
  double target_rate = 0;
  double duration_s = 0;
  double achieved_rate = 0;  ///< sent / wall time of the send phase
  std::uint64_t sent = 0;
  std::uint64_t accepted = 0;  ///< 2xx
  std::uint64_t rejected = 0;  ///< any other HTTP answer
  std::uint64_t lost = 0;      ///< no HTTP answer at all
  std::map<int, std::uint64_t> by_status;
  LatencySummary latency;
  /// Filled in verify mode.
  std::optional<std::uint64_t> confirmed;
  std::optional<std::uint64_t> failed;
  std::optional<std::uint64_t> unsettled;
  std::optional<LatencySummary> end_to_end;
  std::vector<std::string> request_ids;

  nlohmann::json to_json() const;
};

struct OverheadReport {
  LoadReport direct;
  LoadReport through_broker;
  /// (through_broker mean - direct mean) / direct mean, in percent.
  double overhead_pct = 0;

  nlohmann::json to_json() const;
};

/// An entryBatch body of roughly `size` bytes for lot `<run_id>-<n>`.
std::string loadgen_payload(const std::string& run_id, std::uint64_t n, std::size_t size);

/// Sends at a fixed rate from many workers sharing one schedule. A late
/// worker sends immediately rather than skipping its slot.
LoadReport run_loadgen(const LoadgenOptions& options);

/// The same load against `/direct{path}` and then `{path}`.
OverheadReport run_paired(const LoadgenOptions& options);

}  // namespace traceadapt::orchestrator
