#include "traceadapt/status/status.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "traceadapt/core/digest.hpp"

namespace traceadapt::status {

using nlohmann::json;

std::string_view to_string(State s) {
  switch (s) {
    case State::Received: return "Received";
    case State::Translated: return "Translated";
    case State::Processing: return "Processing";
    case State::Confirmed: return "Confirmed";
    case State::Failed: return "Failed";
  }
  return "?";
}

std::optional<State> parse_state(std::string_view text) {
  for (auto s : kAllStates) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

bool is_terminal(State s) { return s == State::Confirmed || s == State::Failed; }

bool is_legal(State from, State to) {
  if (is_terminal(from)) return false;
  if (to == State::Failed) return true;
  return static_cast<int>(to) == static_cast<int>(from) + 1;
}

std::string_view to_string(TransitionErrorCode c) {
  switch (c) {
    case TransitionErrorCode::NotFound: return "not_found";
    case TransitionErrorCode::AlreadyExists: return "already_exists";
    case TransitionErrorCode::IllegalTransition: return "illegal_transition";
    case TransitionErrorCode::MissingCorrelation: return "missing_correlation";
    case TransitionErrorCode::MissingReason: return "missing_reason";
  }
  return "?";
}

namespace {

json history_to_json(const std::vector<HistoryEntry>& history) {
  json arr = json::array();
  for (const auto& h : history) {
    arr.push_back({{"state", to_string(h.state)}, {"at", format_utc(h.at)}, {"detail", h.detail}});
  }
  return arr;
}

}  // namespace

json to_json(const RequestStatus& s) {
  json j = {{"request_id", s.request_id},
            {"tenant", s.tenant.str()},
            {"state", to_string(s.state)},
            {"history", history_to_json(s.history)},
            {"tx_id", s.tx_id ? json(*s.tx_id) : json(nullptr)},
            {"block_number", s.block_number ? json(*s.block_number) : json(nullptr)},
            {"errors", traceadapt::to_json(s.errors)}};
  return j;
}

std::string history_digest(const std::vector<HistoryEntry>& history) {
  return sha256_hex(history_to_json(history).dump());
}

StatusStore::StatusStore(std::filesystem::path log_file, StatusStoreOptions options)
    : file_(std::move(log_file)), options_(options) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  std::string text;
  {
    std::ifstream f(file_, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  auto complete = text.rfind('\n');
  std::size_t keep = complete == std::string::npos ? 0 : complete + 1;
  if (keep != text.size()) {
    spdlog::warn("status log {}: dropping {} bytes of torn tail", file_.string(), text.size() - keep);
    text.resize(keep);
    if (std::filesystem::exists(file_)) std::filesystem::resize_file(file_, keep);
  }
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    auto state = parse_state(j.value("state", ""));
    auto at = parse_iso8601(j.value("at", ""));
    if (!state || !at) continue;
    Transition t{*state, j.value("detail", ""), std::nullopt, std::nullopt, errors_from_json(j.value("errors", json()))};
    if (j.contains("tx_id")) t.tx_id = j["tx_id"].get<std::string>();
    if (j.contains("block_number")) t.block_number = j["block_number"].get<std::uint64_t>();
    std::optional<TenantId> tenant;
    if (j.contains("tenant")) tenant = TenantId::parse(j["tenant"].get<std::string>());
    apply(j.value("request_id", ""), tenant, std::move(t), *at, false);
  }
  fd_ = ::open(file_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open status log " + file_.string());
}

StatusStore::~StatusStore() {
  if (fd_ >= 0) ::close(fd_);
}

void StatusStore::append_line(const std::string& line) {
  std::string out = line + "\n";
  const char* p = out.data();
  std::size_t left = out.size();
  while (left > 0) {
    auto n = ::write(fd_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error("cannot append to status log " + file_.string());
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (options_.sync) ::fdatasync(fd_);
}

TransitionResult StatusStore::record_received(const std::string& request_id, const TenantId& tenant,
                                              const std::string& detail) {
  std::lock_guard lock(mu_);
  return apply(request_id, tenant, Transition{State::Received, detail, {}, {}, {}}, now_utc(), true);
}

TransitionResult StatusStore::record(const std::string& request_id, Transition t) {
  std::lock_guard lock(mu_);
  return apply(request_id, std::nullopt, std::move(t), now_utc(), true);
}

TransitionResult StatusStore::apply(const std::string& request_id, const std::optional<TenantId>& tenant, Transition t,
                                    Timestamp at, bool persist) {
  auto reject = [&](TransitionErrorCode code, std::string msg) -> TransitionResult {
    if (persist) spdlog::warn("status {}: {} ({})", request_id, msg, to_string(code));
    return TransitionError{code, std::move(msg)};
  };
  auto it = requests_.find(request_id);
  if (t.state == State::Received) {
    if (it != requests_.end()) return reject(TransitionErrorCode::AlreadyExists, "request already recorded");
    if (!tenant || request_id.empty()) return reject(TransitionErrorCode::NotFound, "Received needs a tenant and id");
  } else {
    if (it == requests_.end()) return reject(TransitionErrorCode::NotFound, "unknown request");
    if (!is_legal(it->second.state, t.state)) {
      return reject(TransitionErrorCode::IllegalTransition, std::string(to_string(it->second.state)) + " -> " +
                                                                std::string(to_string(t.state)) + " is not allowed");
    }
  }
  if (t.state == State::Confirmed && (!t.tx_id || !t.block_number)) {
    return reject(TransitionErrorCode::MissingCorrelation, "Confirmed needs tx_id and block_number");
  }
  if (t.state == State::Failed && t.errors.empty() && t.detail.empty()) {
    return reject(TransitionErrorCode::MissingReason, "Failed needs errors or a detail");
  }

  if (it != requests_.end() && !it->second.history.empty()) at = std::max(at, it->second.history.back().at);
  if (persist) {
    json line = {{"request_id", request_id}, {"state", to_string(t.state)}, {"at", format_utc(at)}};
    if (!t.detail.empty()) line["detail"] = t.detail;
    if (tenant) line["tenant"] = tenant->str();
    if (t.tx_id) line["tx_id"] = *t.tx_id;
    if (t.block_number) line["block_number"] = *t.block_number;
    if (!t.errors.empty()) line["errors"] = traceadapt::to_json(t.errors);
    append_line(line.dump());
  }

  if (it == requests_.end()) {
    RequestStatus s;
    s.request_id = request_id;
    s.tenant = *tenant;
    it = requests_.emplace(request_id, std::move(s)).first;
    by_tenant_[tenant->str()].push_back(request_id);
  }
  auto& s = it->second;
  s.state = t.state;
  s.history.push_back({t.state, at, t.detail});
  if (t.tx_id) s.tx_id = t.tx_id;
  if (t.block_number) s.block_number = t.block_number;
  if (!t.errors.empty()) s.errors = std::move(t.errors);
  ++transitions_[s.tenant.str()][t.state];
  if (t.state == State::Confirmed) {
    latencies_ms_.push_back(std::chrono::duration<double, std::milli>(at - s.history.front().at).count());
  }
  if (persist) changed_.notify_all();
  return s;
}

std::optional<RequestStatus> StatusStore::get(const std::string& request_id) const {
  std::lock_guard lock(mu_);
  auto it = requests_.find(request_id);
  if (it == requests_.end()) return std::nullopt;
  return it->second;
}

std::variant<RequestStatus, AccessError> StatusStore::get_for(const std::string& request_id,
                                                              const TenantId& caller) const {
  auto s = get(request_id);
  if (!s) return AccessError::NotFound;
  if (s->tenant != caller) return AccessError::Denied;
  return *std::move(s);
}

Page StatusStore::list(const TenantId& tenant, std::optional<State> filter, std::size_t page,
                       std::size_t page_size) const {
  std::lock_guard lock(mu_);
  Page out;
  out.page = page;
  out.page_size = page_size;
  auto it = by_tenant_.find(tenant.str());
  if (it == by_tenant_.end() || page_size == 0) return out;
  std::size_t skip = page * page_size;
  for (auto id = it->second.rbegin(); id != it->second.rend(); ++id) {
    const auto& s = requests_.at(*id);
    if (filter && s.state != *filter) continue;
    if (out.total >= skip && out.items.size() < page_size) out.items.push_back(s);
    ++out.total;
  }
  return out;
}

std::optional<RequestStatus> StatusStore::wait_terminal(const std::string& request_id,
                                                        std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  auto done = [&] {
    auto it = requests_.find(request_id);
    return it != requests_.end() && is_terminal(it->second.state);
  };
  if (!changed_.wait_for(lock, timeout, done)) return std::nullopt;
  return requests_.at(request_id);
}

namespace {

double nearest_rank(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0;
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

}  // namespace

MetricsSnapshot StatusStore::metrics(std::map<std::string, std::map<std::string, std::uint64_t>> lag) const {
  MetricsSnapshot m;
  std::vector<double> sorted;
  {
    std::lock_guard lock(mu_);
    m.transitions = transitions_;
    for (const auto& [id, s] : requests_) ++m.current[s.tenant.str()][s.state];
    sorted = latencies_ms_;
  }
  std::sort(sorted.begin(), sorted.end());
  m.end_to_end = {sorted.size(), nearest_rank(sorted, 0.50), nearest_rank(sorted, 0.95), nearest_rank(sorted, 0.99)};
  m.lag = std::move(lag);
  return m;
}

std::size_t StatusStore::size() const {
  std::lock_guard lock(mu_);
  return requests_.size();
}

std::vector<std::string> StatusStore::request_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [tenant, ids] : by_tenant_) out.insert(out.end(), ids.begin(), ids.end());
  return out;
}

std::string render_metrics(const MetricsSnapshot& m) {
  std::ostringstream out;
  auto counters = [&](const char* name, const auto& table) {
    for (const auto& [tenant, by_state] : table) {
      for (auto s : kAllStates) {
        auto it = by_state.find(s);
        out << name << "{tenant=\"" << tenant << "\",state=\"" << to_string(s) << "\"} "
            << (it == by_state.end() ? 0 : it->second) << "\n";
      }
    }
  };
  counters("traceadapt_status_transitions_total", m.transitions);
  counters("traceadapt_requests", m.current);
  out << "traceadapt_e2e_latency_ms{quantile=\"0.5\"} " << m.end_to_end.p50_ms << "\n";
  out << "traceadapt_e2e_latency_ms{quantile=\"0.95\"} " << m.end_to_end.p95_ms << "\n";
  out << "traceadapt_e2e_latency_ms{quantile=\"0.99\"} " << m.end_to_end.p99_ms << "\n";
  out << "traceadapt_e2e_latency_ms_count " << m.end_to_end.samples << "\n";
  for (const auto& [topic, groups] : m.lag) {
    for (const auto& [group, lag] : groups) {
      out << "traceadapt_consumer_lag{topic=\"" << topic << "\",group=\"" << group << "\"} " << lag << "\n";
    }
  }
  return out.str();
}

}  // namespace traceadapt::status
