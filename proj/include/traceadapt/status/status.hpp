#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "traceadapt/core/tenant.hpp"
#include "traceadapt/core/time.hpp"
#include "traceadapt/core/validation.hpp"

namespace traceadapt::status {

enum class State { Received, Translated, Processing, Confirmed, Failed };

inline constexpr State kAllStates[] = {State::Received, State::Translated, State::Processing, State::Confirmed,
                                       State::Failed};

std::string_view to_string(State s);
std::optional<State> parse_state(std::string_view text);
bool is_terminal(State s);
/// The lifecycle graph: Received→Translated→Processing→Confirmed, and any
/// non-terminal state→Failed.
bool is_legal(State from, State to);

struct HistoryEntry {
  State state = State::Received;
  Timestamp at{};
  std::string detail;

  bool operator==(const HistoryEntry&) const = default;
};

struct RequestStatus {
  std::string request_id;
  TenantId tenant{"unknown"};
  State state = State::Received;
  std::vector<HistoryEntry> history;
  std::optional<std::string> tx_id;
  std::optional<std::uint64_t> block_number;
  std::vector<ValidationError> errors;

  bool operator==(const RequestStatus&) const = default;
};

nlohmann::json to_json(const RequestStatus& s);

/// SHA-256 over the serialized history, for append-only audits.
std::string history_digest(const std::vector<HistoryEntry>& history);

struct Transition {
  State state = State::Received;
  std::string detail;
  std::optional<std::string> tx_id;
  std::optional<std::uint64_t> block_number;
  std::vector<ValidationError> errors;
};

enum class TransitionErrorCode { NotFound, AlreadyExists, IllegalTransition, MissingCorrelation, MissingReason };

struct TransitionError {
  TransitionErrorCode code;
  std::string message;
};

std::string_view to_string(TransitionErrorCode c);

using TransitionResult = std::variant<RequestStatus, TransitionError>;

enum class AccessError { NotFound, Denied };

struct Page {
  std::vector<RequestStatus> items;
  std::size_t page = 0;
  std::size_t page_size = 0;
  std::size_t total = 0;
};

struct LatencyQuantiles {
  std::size_t samples = 0;
  double p50_ms = 0;
  double p95_ms = 0;
  double p99_ms = 0;
};

struct MetricsSnapshot {
  /// Transitions ever recorded into each state, per tenant.
  std::map<std::string, std::map<State, std::uint64_t>> transitions;
  /// Requests currently in each state, per tenant.
  std::map<std::string, std::map<State, std::uint64_t>> current;
  LatencyQuantiles end_to_end;
  /// topic -> group -> unread messages, supplied by the caller.
  std::map<std::string, std::map<std::string, std::uint64_t>> lag;
};

/// One metric per line: `name{label="v",...} value`.
std::string render_metrics(const MetricsSnapshot& m);

struct StatusStoreOptions {
  /// fdatasync the log after every record; otherwise a record is in the OS
  /// page cache before the call returns, which survives process death.
  bool sync = false;
};

/// Request lifecycle store backed by an append-only JSON-lines log that is
/// replayed on open.
class StatusStore {
 public:
  explicit StatusStore(std::filesystem::path log_file, StatusStoreOptions options = {});
  ~StatusStore();

  StatusStore(const StatusStore&) = delete;
  StatusStore& operator=(const StatusStore&) = delete;

  TransitionResult record_received(const std::string& request_id, const TenantId& tenant,
                                   const std::string& detail = {});
  TransitionResult record(const std::string& request_id, Transition t);

  std::optional<RequestStatus> get(const std::string& request_id) const;
  std::variant<RequestStatus, AccessError> get_for(const std::string& request_id, const TenantId& caller) const;
  /// Newest first. `page` is zero-based.
  Page list(const TenantId& tenant, std::optional<State> filter, std::size_t page, std::size_t page_size) const;

  /// Blocks until the request is Confirmed or Failed.
  std::optional<RequestStatus> wait_terminal(const std::string& request_id, std::chrono::milliseconds timeout) const;

  MetricsSnapshot metrics(std::map<std::string, std::map<std::string, std::uint64_t>> lag = {}) const;
  std::size_t size() const;
  std::vector<std::string> request_ids() const;

 private:
  TransitionResult apply(const std::string& request_id, const std::optional<TenantId>& tenant, Transition t,
                         Timestamp at, bool persist);
  void append_line(const std::string& line);

  std::filesystem::path file_;
  StatusStoreOptions options_;
  int fd_ = -1;
  mutable std::mutex mu_;
  mutable std::condition_variable changed_;
  std::unordered_map<std::string, RequestStatus> requests_;
  std::map<std::string, std::vector<std::string>> by_tenant_;  // arrival order
  std::map<std::string, std::map<State, std::uint64_t>> transitions_;
  std::vector<double> latencies_ms_;
};

}  // namespace traceadapt::status
