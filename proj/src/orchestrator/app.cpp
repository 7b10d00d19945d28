#include "traceadapt/orchestrator/app.hpp"

#include <thread>

#include <spdlog/spdlog.h>

namespace traceadapt::orchestrator {

App::App(PipelineConfig config) : config_(std::move(config)) {
  std::filesystem::create_directories(config_.data_dir);
  broker_ = std::make_unique<broker::Broker>(config_.data_dir / "broker", config_.broker);
  ledger_ = std::make_unique<ledger::Ledger>(config_.data_dir / "ledger", config_.ledger);
  status_ = std::make_unique<status::StatusStore>(config_.data_dir / "status.log", config_.status);
  cursors_ = std::make_unique<extractors::CursorStore>(config_.data_dir / "cursors");

  for (const auto& t : config_.tenants) {
    for (auto stage : {broker::Stage::Raw, broker::Stage::Epcis, broker::Stage::Dlq}) {
      broker_->ensure_topic(broker::TopicName{t.id, stage}.str(), config_.topics);
    }
    for (const auto& c : t.credentials) {
      if (!c.key_hash.empty()) {
        credentials_.add({c.username, c.key_hash, t.id, config_.hash_cost});
      } else {
        credentials_.add_plaintext(c.username, c.key, t.id, config_.hash_cost);
      }
    }
  }
  for (const auto& c : config_.channels) ledger_->ensure_channel(c.name, c.members, c.shared);
  for (const auto& m : config_.mappings) mappings_.add(m);

  ingress_ = std::make_unique<extractors::IngressService>(
      *broker_, *status_, credentials_, mappings_,
      extractors::IngressOptions{config_.server.max_body_bytes, config_.server.retry_after});
  for (const auto& t : config_.tenants) {
    transformers_.push_back(
        std::make_unique<transform::Transformer>(*broker_, *status_, mappings_, t.id, config_.transformer));
  }
  for (const auto& p : config_.loaders) {
    loaders_.push_back(std::make_unique<loader::Loader>(p, *broker_, *ledger_, *status_));
  }
  for (const auto& s : config_.poll_sources) {
    pollers_.push_back(std::make_unique<extractors::Poller>(s, *broker_, *status_, *cursors_));
  }
}

App::~App() { shutdown(std::chrono::seconds(5)); }

void App::start() {
  std::lock_guard lock(lifecycle_mu_);
  if (started_ || stopped_) return;
  started_ = true;
  for (auto& t : transformers_) t->start();
  for (auto& l : loaders_) l->start();
  for (auto& p : pollers_) p->start();
  spdlog::info("pipeline started: {} tenants, {} loaders, {} poll sources", config_.tenants.size(), loaders_.size(),
               pollers_.size());
}

bool App::shutdown(std::chrono::milliseconds drain_timeout) {
  std::lock_guard lock(lifecycle_mu_);
  if (stopped_) return true;
  stopped_ = true;
  for (auto& p : pollers_) p->stop();
  for (auto& t : transformers_) t->stop();
  bool clean = true;
  auto deadline = std::chrono::steady_clock::now() + drain_timeout;
  for (auto& l : loaders_) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    auto r = l->drain(std::max(left, std::chrono::milliseconds(0)));
    if (!r.drained) {
      clean = false;
      spdlog::warn("loader {}: drain timed out with {} in flight", l->pipeline().tenant.str(), r.in_flight);
    }
    l->stop();
  }
  broker_->flush();
  return clean;
}

bool App::quiescent() const {
  for (const auto& t : config_.tenants) {
    auto raw = broker_->stats(broker::TopicName{t.id, broker::Stage::Raw}.str());
    if (raw.lag.count("transform") && raw.lag.at("transform") > 0) return false;
  }
  for (const auto& p : config_.loaders) {
    auto epcis = broker_->stats(p.epcis_topic);
    if (epcis.lag.count(p.group) && epcis.lag.at(p.group) > 0) return false;
  }
  return true;
}

bool App::wait_quiescent(std::chrono::milliseconds timeout) const {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (quiescent()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return quiescent();
}

std::string App::metrics_text() const {
  std::map<std::string, std::map<std::string, std::uint64_t>> lag;
  for (const auto& topic : broker_->topics()) {
    for (const auto& [group, n] : broker_->stats(topic).lag) lag[topic][group] = n;
  }
  return status::render_metrics(status_->metrics(std::move(lag)));
}

}  // namespace traceadapt::orchestrator
