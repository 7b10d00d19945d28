#include "traceadapt/loader/loader.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

namespace traceadapt::loader {

using nlohmann::json;
using status::State;
using status::Transition;

namespace {

struct Stopped {};

}  // namespace

std::chrono::milliseconds RetryPolicy::next(std::chrono::milliseconds current) const {
  auto scaled = std::chrono::milliseconds(static_cast<std::int64_t>(static_cast<double>(current.count()) * multiplier));
  return std::min(std::max(scaled, base), cap);
}

bool SharedChannelRule::matches(const CanonicalEvent& e) const {
  return event_types.count(e.event_type) != 0 || biz_steps.count(e.biz_step) != 0;
}

Loader::Loader(LoaderPipeline pipeline, broker::Broker& broker, ledger::Ledger& ledger, status::StatusStore& status)
    : pipeline_(std::move(pipeline)),
      broker_(broker),
      ledger_(ledger),
      status_(status),
      dlq_(pipeline_.tenant.str() + ".dlq") {
  if (!ledger_.channel(pipeline_.channel)) {
    throw std::invalid_argument("loader: unknown channel '" + pipeline_.channel + "'");
  }
  if (!pipeline_.shared_channel.empty() && !ledger_.channel(pipeline_.shared_channel)) {
    throw std::invalid_argument("loader: unknown shared channel '" + pipeline_.shared_channel + "'");
  }
  broker_.register_group(pipeline_.epcis_topic, pipeline_.group);
  position_ = next_read_ = broker_.resume_offset(pipeline_.epcis_topic, pipeline_.group);
}

Loader::~Loader() { stop(); }

void Loader::start() {
  if (running_.exchange(true)) return;
  draining_ = false;
  {
    std::lock_guard lock(done_mu_);
    done_ = false;
  }
  thread_ = std::thread([this] { loop(); });
}

void Loader::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
  window_.clear();
  next_read_ = position_;
  in_flight_ = 0;
}

DrainResult Loader::drain(std::chrono::milliseconds timeout) {
  if (!thread_.joinable()) return {true, 0};
  draining_ = true;
  std::unique_lock lock(done_mu_);
  if (!done_cv_.wait_for(lock, timeout, [&] { return done_; })) return {false, in_flight_.load()};
  lock.unlock();
  running_ = false;
  thread_.join();
  return {true, 0};
}

bool Loader::caught_up() const {
  return window_.empty() && broker_.stats(pipeline_.epcis_topic).latest_offset <= position_;
}

std::size_t Loader::run_once() {
  std::size_t handled = 0;
  while (fill(pipeline_.max_in_flight) > 0 || !window_.empty()) {
    while (!window_.empty()) {
      finish(window_.front());
      window_.pop_front();
      ++handled;
    }
  }
  in_flight_ = 0;
  return handled;
}

void Loader::loop() {
  try {
    while (running_) {
      if (!draining_ && window_.size() <= pipeline_.max_in_flight / 2) fill(pipeline_.max_in_flight - window_.size());
      if (window_.empty()) {
        if (draining_) break;
        broker_.wait_for(pipeline_.epcis_topic, next_read_, pipeline_.idle_wait);
        continue;
      }
      finish(window_.front());
      window_.pop_front();
      in_flight_ = window_.size();
    }
  } catch (const Stopped&) {
  } catch (const std::exception& e) {
    spdlog::error("loader {}: {}", pipeline_.tenant.str(), e.what());
  }
  std::lock_guard lock(done_mu_);
  done_ = true;
  done_cv_.notify_all();
}

std::size_t Loader::fill(std::size_t room) {
  if (room == 0) return 0;
  std::vector<broker::Message> batch;
  try {
    batch = broker_.read(pipeline_.epcis_topic, pipeline_.group, next_read_, room);
  } catch (const broker::BrokerError& e) {
    if (e.code() != broker::ErrorCode::OffsetOutOfRange) throw;
    spdlog::warn("loader {}: offset {} expired, resuming at {}", pipeline_.tenant.str(), next_read_, e.floor());
    next_read_ = e.floor();
    batch = broker_.read(pipeline_.epcis_topic, pipeline_.group, next_read_, room);
  }
  for (auto& m : batch) {
    next_read_ = m.offset + 1;
    in_flight_ = window_.size() + 1;
    window_.push_back(prepare(std::move(m)));
    in_flight_ = window_.size();
  }
  return batch.size();
}

void Loader::backoff_sleep(std::chrono::milliseconds& delay) {
  auto until = std::chrono::steady_clock::now() + delay;
  while (std::chrono::steady_clock::now() < until) {
    if (thread_.joinable() && !running_) throw Stopped{};
    std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(
        until - std::chrono::steady_clock::now(), std::chrono::milliseconds(20)));
  }
  delay = pipeline_.retry.next(delay);
}

ledger::SubmitTicket Loader::submit_with_retry(const std::string& channel, const CanonicalEvent& e) {
  auto delay = pipeline_.retry.base;
  while (true) {
    try {
      return ledger_.submit_async(channel, pipeline_.tenant, e);
    } catch (const ledger::LedgerError& err) {
      if (!err.transient()) throw;
      spdlog::warn("loader {}: {}; retrying in {} ms", pipeline_.tenant.str(), err.what(), delay.count());
      backoff_sleep(delay);
    }
  }
}

Loader::InFlight Loader::prepare(broker::Message m) {
  InFlight f{std::move(m), {}, {}, {}, {}, false};
  auto body = json::parse(f.message.payload, nullptr, false);
  if (body.is_discarded() || !body.is_object() || !body.contains("event")) {
    f.rejection.push_back(make_error("unreadable", "message", "epcis message is not {request_id, event}"));
    return f;
  }
  f.request_id = body.value("request_id", "");
  auto decoded = event_from_json(body["event"]);
  if (auto* errs = std::get_if<std::vector<ValidationError>>(&decoded)) {
    f.rejection = *errs;
    return f;
  }
  f.event = std::get<CanonicalEvent>(std::move(decoded));
  if (f.event->tenant != pipeline_.tenant.str()) {
    f.rejection.push_back(make_error("foreign_tenant", "event.tenant", "event belongs to '" + f.event->tenant + "'"));
    return f;
  }

  if (auto current = status_.get(f.request_id)) {
    if (status::is_terminal(current->state)) {
      f.skip = true;  // settled before a crash; only the offset is missing
      return f;
    }
    if (current->state == State::Received) status_.record(f.request_id, {State::Translated, "recovered by loader", {}, {}, {}});
    if (current->state != State::Processing) {
      status_.record(f.request_id, {State::Processing, "submitted to " + pipeline_.channel, {}, {}, {}});
    }
  } else if (!f.request_id.empty()) {
    spdlog::warn("loader {}: no status for request {}", pipeline_.tenant.str(), f.request_id);
  }

  try {
    f.ticket = submit_with_retry(pipeline_.channel, *f.event);
  } catch (const ledger::LedgerError& err) {
    f.rejection.push_back(make_error("ledger_rejected", pipeline_.channel, err.what()));
  }
  return f;
}

void Loader::reject(InFlight& f) {
  json copy = {{"request_id", f.request_id}, {"message", f.message.payload}, {"errors", to_json(f.rejection)}};
  auto delay = pipeline_.retry.base;
  while (!std::holds_alternative<std::uint64_t>(broker_.append(dlq_, f.message.key, copy.dump()))) {
    backoff_sleep(delay);
  }
  if (!f.request_id.empty() && status_.get(f.request_id)) {
    status_.record(f.request_id, {State::Failed, "ledger submission rejected", {}, {}, f.rejection});
  }
  ++failed_;
}

void Loader::finish(InFlight& f) {
  if (!f.skip && f.rejection.empty()) {
    ledger::SubmitResult result;
    auto delay = pipeline_.retry.base;
    while (true) {
      try {
        result = f.ticket->get();
        break;
      } catch (const ledger::LedgerError& err) {
        if (!err.transient()) {
          f.rejection.push_back(make_error("ledger_rejected", pipeline_.channel, err.what()));
          break;
        }
        spdlog::warn("loader {}: {}; resubmitting", pipeline_.tenant.str(), err.what());
        backoff_sleep(delay);
        f.ticket = submit_with_retry(pipeline_.channel, *f.event);
      }
    }

    if (f.rejection.empty()) {
      if (after_submit_) after_submit_(f.request_id);
      Transition t{State::Confirmed, {}, {}, {}, {}};
      if (auto* c = std::get_if<ledger::Committed>(&result)) {
        t.detail = "committed to " + pipeline_.channel;
        t.tx_id = c->tx_id;
        t.block_number = c->block_number;
        ++confirmed_;
      } else {
        const auto& d = std::get<ledger::Duplicate>(result);
        t.detail = "duplicate_suppressed";
        t.tx_id = d.existing_tx_id;
        t.block_number = d.block_number;
        ++duplicates_;
      }

      if (!pipeline_.shared_channel.empty() && pipeline_.shared_rule.matches(*f.event)) {
        auto shared_delay = pipeline_.retry.base;
        while (true) {
          try {
            submit_with_retry(pipeline_.shared_channel, *f.event).get();
            ++promoted_;
            t.detail += "; shared on " + pipeline_.shared_channel;
            break;
          } catch (const ledger::LedgerError& err) {
            if (!err.transient()) {
              spdlog::error("loader {}: shared submit of {} refused: {}", pipeline_.tenant.str(), f.request_id,
                            err.what());
              break;
            }
            backoff_sleep(shared_delay);
          }
        }
      }
      if (!f.request_id.empty() && status_.get(f.request_id)) status_.record(f.request_id, std::move(t));
    }
  }
  if (!f.rejection.empty()) reject(f);

  broker_.commit_offset(pipeline_.epcis_topic, pipeline_.group, f.message.offset);
  position_ = f.message.offset + 1;
}

}  // namespace traceadapt::loader
