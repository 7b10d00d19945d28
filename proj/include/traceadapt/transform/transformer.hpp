#pragma once

#include <atomic>
#include <chrono>
#include <string>
#include <thread>

#include "traceadapt/broker/broker.hpp"
#include "traceadapt/status/status.hpp"
#include "traceadapt/transform/mapping.hpp"

namespace traceadapt::transform {

struct TransformerOptions {
  std::string group = "transform";
  std::size_t batch = 64;
  std::chrono::milliseconds idle_wait{200};
  std::chrono::milliseconds retry_base{100};
  std::chrono::milliseconds retry_cap{5000};
  EventRules rules{};
};

/// Payload of an epcis-topic message.
nlohmann::json epcis_message(const std::string& request_id, const CanonicalEvent& e);

/// Consumes `<tenant>.raw`, maps each record, and routes the result to
/// `<tenant>.epcis` or `<tenant>.dlq`. The raw offset is committed only after
/// the outcome is in the status store and on the output topic.
class Transformer {
 public:
  Transformer(broker::Broker& broker, status::StatusStore& status, const MappingRegistry& registry, TenantId tenant,
              TransformerOptions options = {});
  ~Transformer();

  Transformer(const Transformer&) = delete;
  Transformer& operator=(const Transformer&) = delete;

  void start();
  void stop();

  /// Processes whatever is available now, without the background thread.
  /// Returns the number of records handled.
  std::size_t run_once();

  /// True when every raw message has been consumed.
  bool caught_up() const;

  std::uint64_t translated() const { return translated_.load(); }
  std::uint64_t failed() const { return failed_.load(); }

 private:
  void loop();
  void handle(const broker::Message& m);
  void append_with_retry(const std::string& topic, const std::string& key, const std::string& payload);

  broker::Broker& broker_;
  status::StatusStore& status_;
  const MappingRegistry& registry_;
  TenantId tenant_;
  TransformerOptions options_;
  std::string raw_, epcis_, dlq_;
  std::uint64_t position_ = 0;
  std::atomic<bool> running_{false};
  std::thread thread_;
  std::atomic<std::uint64_t> translated_{0};
  std::atomic<std::uint64_t> failed_{0};
};

}  // namespace traceadapt::transform
