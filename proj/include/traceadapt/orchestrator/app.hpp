#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "traceadapt/broker/broker.hpp"
#include "traceadapt/extractors/credentials.hpp"
#include "traceadapt/extractors/ingress.hpp"
#include "traceadapt/extractors/poller.hpp"
#include "traceadapt/ledger/ledger.hpp"
#include "traceadapt/loader/loader.hpp"
#include "traceadapt/orchestrator/config.hpp"
#include "traceadapt/status/status.hpp"
#include "traceadapt/transform/transformer.hpp"

namespace traceadapt::orchestrator {

/// Every module of one pipeline, wired from a config. Per tenant the
/// dataflow is ingress -> `<t>.raw` -> transformer -> `<t>.epcis` -> loader ->
/// ledger channel, with rejects on `<t>.dlq`.
class App {
 public:
  explicit App(PipelineConfig config);
  ~App();

  App(const App&) = delete;
  App& operator=(const App&) = delete;

  /// Starts transformers, loaders and pollers.
  void start();
  /// Stops intake, lets transformers and loaders finish what is queued, then
  /// flushes the broker. Safe to call more than once.
  bool shutdown(std::chrono::milliseconds drain_timeout = std::chrono::seconds(30));

  /// True when every raw and epcis message has been consumed and committed.
  bool quiescent() const;
  bool wait_quiescent(std::chrono::milliseconds timeout) const;

  /// Status metrics with consumer lag from the broker.
  std::string metrics_text() const;

  const PipelineConfig& config() const { return config_; }
  broker::Broker& broker() { return *broker_; }
  ledger::Ledger& ledger() { return *ledger_; }
  status::StatusStore& status() { return *status_; }
  extractors::CredentialStore& credentials() { return credentials_; }
  extractors::IngressService& ingress() { return *ingress_; }
  const transform::MappingRegistry& mappings() const { return mappings_; }
  const std::vector<std::unique_ptr<loader::Loader>>& loaders() const { return loaders_; }
  const std::vector<std::unique_ptr<extractors::Poller>>& pollers() const { return pollers_; }

 private:
  PipelineConfig config_;
  std::unique_ptr<broker::Broker> broker_;
  std::unique_ptr<ledger::Ledger> ledger_;
  std::unique_ptr<status::StatusStore> status_;
  extractors::CredentialStore credentials_;
  transform::MappingRegistry mappings_;
  std::unique_ptr<extractors::IngressService> ingress_;
  std::unique_ptr<extractors::CursorStore> cursors_;
  std::vector<std::unique_ptr<transform::Transformer>> transformers_;
  std::vector<std::unique_ptr<loader::Loader>> loaders_;
  std::vector<std::unique_ptr<extractors::Poller>> pollers_;
  std::mutex lifecycle_mu_;
  bool started_ = false;
  bool stopped_ = false;
};

}  // namespace traceadapt::orchestrator
