#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "traceadapt/broker/broker.hpp"
#include "traceadapt/core/raw_record.hpp"
#include "traceadapt/status/status.hpp"

namespace traceadapt::extractors {

/// An HTTP listing polled for new rows.
struct PollSource {
  std::string id;
  TenantId tenant{"unknown"};
  std::string url;             ///< `http://host[:port]/path`
  std::string items_path;      ///< where the row array sits in the response; empty for a bare array
  std::string cursor_field = "id";
  std::chrono::milliseconds interval{std::chrono::hours(1)};
  std::string username;        ///< read-only account, sent as X-Username / X-Api-Key
  std::string api_key;
};

struct PollCursor {
  std::string source_id;
  std::optional<nlohmann::json> last_seen;
  Timestamp updated_at{};

  bool operator==(const PollCursor&) const = default;
};

/// Orders cursor values: numbers numerically, strings lexicographically,
/// numbers before strings.
bool cursor_less(const nlohmann::json& a, const nlohmann::json& b);

struct PollResult {
  std::vector<RawRecord> records;
  PollCursor cursor;
};

/// Rows strictly after the cursor, ascending; the cursor moves to the last one.
/// Pure apart from the fresh request ids.
std::variant<PollResult, std::string> select_new(const nlohmann::json& listing, const PollSource& source,
                                                 const PollCursor& cursor);

/// Fetches the listing and applies select_new. An error leaves the cursor as is.
std::variant<PollResult, std::string> poll_once(const PollSource& source, const PollCursor& cursor);

/// One JSON file per source under `dir`, replaced atomically.
class CursorStore {
 public:
  explicit CursorStore(std::filesystem::path dir);
  PollCursor load(const std::string& source_id) const;
  void save(const PollCursor& cursor);

 private:
  std::filesystem::path dir_;
};

/// Scheduled loop for one source. Records are appended before the cursor is
/// saved, so a crash repeats rows rather than losing them.
class Poller {
 public:
  Poller(PollSource source, broker::Broker& broker, status::StatusStore& status, CursorStore& cursors);
  ~Poller();

  void start();
  void stop();
  /// Polls now. Returns rows ingested, or the error.
  std::variant<std::size_t, std::string> tick();

 private:
  void loop();

  PollSource source_;
  broker::Broker& broker_;
  status::StatusStore& status_;
  CursorStore& cursors_;
  std::mutex mu_;
  std::condition_variable wake_;
  bool stopping_ = false;
  std::thread thread_;
};

}  // namespace traceadapt::extractors
