#include "traceadapt/transform/transformer.hpp"

#include <spdlog/spdlog.h>

#include "traceadapt/core/canonical.hpp"

namespace traceadapt::transform {

using nlohmann::json;

namespace {

struct Stopped {};

}  // namespace

json epcis_message(const std::string& request_id, const CanonicalEvent& e) {
  return {{"request_id", request_id}, {"event", to_json(e)}};
}

Transformer::Transformer(broker::Broker& broker, status::StatusStore& status, const MappingRegistry& registry,
                         TenantId tenant, TransformerOptions options)
    : broker_(broker),
      status_(status),
      registry_(registry),
      tenant_(std::move(tenant)),
      options_(std::move(options)),
      raw_(tenant_.str() + ".raw"),
      epcis_(tenant_.str() + ".epcis"),
      dlq_(tenant_.str() + ".dlq") {
  broker_.register_group(raw_, options_.group);
  position_ = broker_.resume_offset(raw_, options_.group);
}

Transformer::~Transformer() { stop(); }

void Transformer::start() {
  if (running_.exchange(true)) return;
  thread_ = std::thread([this] { loop(); });
}

void Transformer::stop() {
  running_.store(false);
  if (thread_.joinable()) thread_.join();
}

bool Transformer::caught_up() const { return broker_.stats(raw_).latest_offset <= position_; }

void Transformer::loop() {
  while (running_.load()) {
    std::size_t n = 0;
    try {
      n = run_once();
    } catch (const Stopped&) {
      return;
    } catch (const std::exception& e) {
      spdlog::error("transformer {}: {}", tenant_.str(), e.what());
      std::this_thread::sleep_for(options_.retry_base);
    }
    if (n == 0) broker_.wait_for(raw_, position_, options_.idle_wait);
  }
}

std::size_t Transformer::run_once() {
  std::vector<broker::Message> batch;
  try {
    batch = broker_.read(raw_, options_.group, position_, options_.batch);
  } catch (const broker::BrokerError& e) {
    if (e.code() != broker::ErrorCode::OffsetOutOfRange) throw;
    spdlog::warn("transformer {}: offset {} expired, resuming at {}", tenant_.str(), position_, e.floor());
    position_ = e.floor();
    batch = broker_.read(raw_, options_.group, position_, options_.batch);
  }
  for (const auto& m : batch) {
    handle(m);
    broker_.commit_offset(raw_, options_.group, m.offset);
    position_ = m.offset + 1;
  }
  return batch.size();
}

void Transformer::append_with_retry(const std::string& topic, const std::string& key, const std::string& payload) {
  auto delay = options_.retry_base;
  while (true) {
    auto r = broker_.append(topic, key, payload);
    if (std::holds_alternative<std::uint64_t>(r)) return;
    if (thread_.joinable() && !running_.load()) throw Stopped{};
    std::this_thread::sleep_for(delay);
    delay = std::min(delay * 2, options_.retry_cap);
  }
}

void Transformer::handle(const broker::Message& m) {
  std::optional<RawRecord> parsed;
  try {
    parsed = raw_record_from_json(json::parse(m.payload));
  } catch (const std::exception& e) {
    spdlog::error("transformer {}: unreadable record at offset {}: {}", tenant_.str(), m.offset, e.what());
    append_with_retry(dlq_, m.key, json{{"error", "unreadable raw record"}, {"payload", m.payload}}.dump());
    return;
  }
  const auto& record = *parsed;
  if (record.tenant != tenant_) {
    spdlog::error("transformer {}: record {} belongs to {}", tenant_.str(), record.request_id, record.tenant.str());
    append_with_retry(dlq_, m.key, json{{"error", "foreign tenant"}, {"record", to_json(record)}}.dump());
    return;
  }

  auto current = status_.get(record.request_id);
  if (current && current->state != status::State::Received && current->state != status::State::Translated) {
    return;  // already handed on; a redelivery
  }

  const auto* spec = registry_.select(record.tenant, record.source_kind, record.source_name);
  TransformOutcome outcome{record.request_id,
                           std::vector{make_error("no_mapping", "source",
                                                  "no mapping for " + std::string(to_string(record.source_kind)) +
                                                      " source '" + record.source_name + "'")}};
  if (spec != nullptr) outcome = apply_mapping(record, *spec, options_.rules);

  if (outcome.ok()) {
    const auto& event = std::get<CanonicalEvent>(outcome.result);
    if (current && current->state == status::State::Received) {
      status_.record(record.request_id, {status::State::Translated, spec->name, {}, {}, {}});
    }
    append_with_retry(epcis_, idempotency_key(event).hex(), epcis_message(record.request_id, event).dump());
    ++translated_;
  } else {
    auto& errors = std::get<std::vector<ValidationError>>(outcome.result);
    append_with_retry(dlq_, record.request_id,
                      json{{"request_id", record.request_id}, {"record", to_json(record)}, {"errors", to_json(errors)}}
                          .dump());
    if (current) {
      status_.record(record.request_id, {status::State::Failed, "transform rejected", {}, {}, errors});
    }
    ++failed_;
  }
}

}  // namespace traceadapt::transform
