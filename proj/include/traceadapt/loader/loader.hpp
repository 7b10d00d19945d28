#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>

#include "traceadapt/broker/broker.hpp"
#include "traceadapt/ledger/ledger.hpp"
#include "traceadapt/status/status.hpp"

namespace traceadapt::loader {

struct RetryPolicy {
  std::chrono::milliseconds base{100};
  double multiplier = 2.0;
  std::chrono::milliseconds cap{30000};

  std::chrono::milliseconds next(std::chrono::milliseconds current) const;
};

/// Selects events that are also written to the shared channel: those whose
/// type or biz_step is listed. An empty rule matches nothing.
struct SharedChannelRule {
  std::set<EventType> event_types;
  std::set<std::string> biz_steps;

  bool matches(const CanonicalEvent& e) const;
};

struct LoaderPipeline {
  TenantId tenant{"unknown"};
  std::string epcis_topic;
  std::string channel;
  std::string shared_channel;  ///< empty disables promotion
  SharedChannelRule shared_rule;
  RetryPolicy retry;
  std::string group = "loader";
  std::size_t max_in_flight = 64;
  std::chrono::milliseconds idle_wait{200};
};

struct DrainResult {
  bool drained = true;
  std::size_t in_flight = 0;
};

/// Moves one tenant's EPCIS topic onto its ledger channel. Delivery is
/// at-least-once; ledger idempotency turns redeliveries into Duplicate, so
/// each event is committed once. Submissions are queued in topic order and
/// offsets are committed in the same order, each only after the request's
/// final status is recorded.
class Loader {
 public:
  Loader(LoaderPipeline pipeline, broker::Broker& broker, ledger::Ledger& ledger, status::StatusStore& status);
  ~Loader();

  Loader(const Loader&) = delete;
  Loader& operator=(const Loader&) = delete;

  void start();
  /// Abandons in-flight work; those messages are redelivered on restart.
  void stop();
  /// Stops reading and waits for in-flight submissions to settle.
  DrainResult drain(std::chrono::milliseconds timeout);

  /// Without the background thread: handles everything available now.
  std::size_t run_once();
  bool caught_up() const;

  const LoaderPipeline& pipeline() const { return pipeline_; }
  std::uint64_t confirmed() const { return confirmed_.load(); }
  std::uint64_t duplicates() const { return duplicates_.load(); }
  std::uint64_t promoted() const { return promoted_.load(); }
  std::uint64_t failed() const { return failed_.load(); }

  /// Runs after the ledger accepts an event and before its status and offset
  /// are written. Fault-injection seam for crash tests.
  void set_after_submit(std::function<void(const std::string& request_id)> hook) { after_submit_ = std::move(hook); }

 private:
  struct InFlight {
    broker::Message message;
    std::string request_id;
    std::optional<CanonicalEvent> event;
    std::optional<ledger::SubmitTicket> ticket;
    std::vector<ValidationError> rejection;
    bool skip = false;
  };

  void loop();
  std::size_t fill(std::size_t room);
  InFlight prepare(broker::Message m);
  void finish(InFlight& f);
  ledger::SubmitTicket submit_with_retry(const std::string& channel, const CanonicalEvent& e);
  void reject(InFlight& f);
  void backoff_sleep(std::chrono::milliseconds& delay);

  LoaderPipeline pipeline_;
  broker::Broker& broker_;
  ledger::Ledger& ledger_;
  status::StatusStore& status_;
  std::string dlq_;
  std::deque<InFlight> window_;
  std::uint64_t next_read_ = 0;
  std::uint64_t position_ = 0;
  std::function<void(const std::string&)> after_submit_;

  std::thread thread_;
  std::atomic<bool> running_{false};
  std::atomic<bool> draining_{false};
  std::atomic<std::size_t> in_flight_{0};
  std::mutex done_mu_;
  std::condition_variable done_cv_;
  bool done_ = true;

  std::atomic<std::uint64_t> confirmed_{0};
  std::atomic<std::uint64_t> duplicates_{0};
  std::atomic<std::uint64_t> promoted_{0};
  std::atomic<std::uint64_t> failed_{0};
};

}  // namespace traceadapt::loader
