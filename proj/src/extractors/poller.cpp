#include "traceadapt/extractors/poller.hpp"

#include <algorithm>
#include <fstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "traceadapt/transform/mapping.hpp"

namespace traceadapt::extractors {

namespace fs = std::filesystem;
using nlohmann::json;

bool cursor_less(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    if (a.is_number_integer() && b.is_number_integer()) return a.get<std::int64_t>() < b.get<std::int64_t>();
    return a.get<double>() < b.get<double>();
  }
  if (a.is_number() != b.is_number()) return a.is_number();
  if (a.is_string() && b.is_string()) return a.get<std::string>() < b.get<std::string>();
  return a.dump() < b.dump();
}

std::variant<PollResult, std::string> select_new(const json& listing, const PollSource& source,
                                                 const PollCursor& cursor) {
  const json* rows = source.items_path.empty() ? &listing : transform::lookup_path(listing, source.items_path);
  if (rows == nullptr || !rows->is_array()) return std::string("listing has no row array at '" + source.items_path + "'");

  std::vector<const json*> fresh;
  for (const auto& row : *rows) {
    if (!row.is_object()) continue;
    auto it = row.find(source.cursor_field);
    if (it == row.end() || it->is_null()) {
      spdlog::warn("poll {}: row without {} skipped", source.id, source.cursor_field);
      continue;
    }
    if (cursor.last_seen && !cursor_less(*cursor.last_seen, *it)) continue;
    fresh.push_back(&row);
  }
  std::stable_sort(fresh.begin(), fresh.end(), [&](const json* a, const json* b) {
    return cursor_less(a->at(source.cursor_field), b->at(source.cursor_field));
  });

  PollResult out{{}, cursor};
  const auto now = now_utc();
  for (const auto* row : fresh) {
    out.records.push_back(RawRecord{new_request_id(), source.tenant, SourceKind::Poll, source.id, now,
                                    ContentType::StructuredObject, row->dump()});
  }
  if (!fresh.empty()) {
    out.cursor.last_seen = fresh.back()->at(source.cursor_field);
    out.cursor.updated_at = now;
  }
  return out;
}

std::variant<PollResult, std::string> poll_once(const PollSource& source, const PollCursor& cursor) {
  constexpr std::string_view kScheme = "http://";
  if (source.url.rfind(kScheme, 0) != 0) return std::string("only http:// sources are supported");
  auto slash = source.url.find('/', kScheme.size());
  auto host = source.url.substr(0, slash);
  auto path = slash == std::string::npos ? std::string("/") : source.url.substr(slash);

  httplib::Client client(host);
  client.set_connection_timeout(std::chrono::seconds(5));
  client.set_read_timeout(std::chrono::seconds(30));
  httplib::Headers headers;
  if (!source.username.empty()) {
    headers.emplace("X-Username", source.username);
    headers.emplace("X-Api-Key", source.api_key);
  }
  auto res = client.Get(path, headers);
  if (!res) return "source unreachable: " + httplib::to_string(res.error());
  if (res->status != 200) return "source answered HTTP " + std::to_string(res->status);
  auto listing = json::parse(res->body, nullptr, false);
  if (listing.is_discarded()) return std::string("source page is not valid JSON");
  return select_new(listing, source, cursor);
}

CursorStore::CursorStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

PollCursor CursorStore::load(const std::string& source_id) const {
  PollCursor c{source_id, std::nullopt, {}};
  std::ifstream f(dir_ / (source_id + ".json"));
  if (!f) return c;
  auto j = json::parse(f, nullptr, false);
  if (j.is_discarded()) {
    spdlog::error("cursor file for {} is unreadable; starting from the beginning", source_id);
    return c;
  }
  if (j.contains("last_seen") && !j["last_seen"].is_null()) c.last_seen = j["last_seen"];
  if (auto t = parse_iso8601(j.value("updated_at", ""))) c.updated_at = *t;
  return c;
}

void CursorStore::save(const PollCursor& cursor) {
  auto target = dir_ / (cursor.source_id + ".json");
  auto tmp = target;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    f << json{{"source_id", cursor.source_id},
              {"last_seen", cursor.last_seen ? *cursor.last_seen : json(nullptr)},
              {"updated_at", format_utc(cursor.updated_at)}}
             .dump();
    f.flush();
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, target);
}

Poller::Poller(PollSource source, broker::Broker& broker, status::StatusStore& status, CursorStore& cursors)
    : source_(std::move(source)), broker_(broker), status_(status), cursors_(cursors) {}

Poller::~Poller() { stop(); }

void Poller::start() {
  if (thread_.joinable()) return;
  stopping_ = false;
  thread_ = std::thread([this] { loop(); });
}

void Poller::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  wake_.notify_all();
  if (thread_.joinable()) thread_.join();
}

std::variant<std::size_t, std::string> Poller::tick() {
  auto cursor = cursors_.load(source_.id);
  auto polled = poll_once(source_, cursor);
  if (auto* err = std::get_if<std::string>(&polled)) return *err;
  auto& result = std::get<PollResult>(polled);
  std::size_t done = 0;
  auto topic = source_.tenant.str() + ".raw";
  for (const auto& record : result.records) {
    status_.record_received(record.request_id, record.tenant, "poll " + source_.id);
    if (!std::holds_alternative<std::uint64_t>(broker_.append(topic, record.request_id, to_json(record).dump()))) {
      status_.record(record.request_id, {status::State::Failed, "backpressure", {}, {}, {}});
      break;
    }
    cursor.last_seen = json::parse(record.payload).at(source_.cursor_field);
    cursor.updated_at = now_utc();
    ++done;
  }
  if (done > 0) cursors_.save(cursor);
  if (done < result.records.size()) return std::string("back-pressure after " + std::to_string(done) + " rows");
  return done;
}

void Poller::loop() {
  auto backoff = std::chrono::milliseconds(1000);
  while (true) {
    std::chrono::milliseconds wait = source_.interval;
    try {
      auto r = tick();
      if (auto* err = std::get_if<std::string>(&r)) {
        spdlog::warn("poll {}: {}; retrying in {} ms", source_.id, *err, backoff.count());
        wait = std::min(backoff, source_.interval);
        backoff = std::min(backoff * 2, std::chrono::milliseconds(std::chrono::minutes(5)));
      } else {
        backoff = std::chrono::milliseconds(1000);
      }
    } catch (const std::exception& e) {
      spdlog::error("poll {}: {}", source_.id, e.what());
    }
    std::unique_lock lock(mu_);
    if (wake_.wait_for(lock, wait, [&] { return stopping_; })) return;
  }
}

}  // namespace traceadapt::extractors
