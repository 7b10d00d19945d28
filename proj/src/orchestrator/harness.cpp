#include "traceadapt/orchestrator/harness.hpp"

#include <algorithm>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "traceadapt/core/raw_record.hpp"

namespace traceadapt::orchestrator {

using nlohmann::json;
using namespace std::chrono_literals;

namespace {

const char* kProductClass = "urn:epc:class:lgtin:5600001.000002.";
const char* kFarmClass = "urn:epc:class:lgtin:5600000.000001.";

const char* kMixedDailyFile =
    "SN daily arrivals;store 014;exported 2024-06-11\n"
    "lot;received;qty\n"
    "X100;11.06.2024 08:15;12\n"
    "X101;11.06.2024 08:20;8\n"
    "X102;11.06.2024 08:31;20\n"
    "X103;11.06.2024 09:02\n"
    "X104;11.06.2024 09:10;15\n"
    "X105;11.06.2024 09:45;6\n"
    "X106;11.06.2024 10:05;twelve\n"
    "X107;11.06.2024 10:30;9\n"
    "X108;11.06.2024 11:00;14\n"
    "X109;11.06.2024 11:20;11\n";

std::filesystem::path make_temp_dir() {
  auto pattern = (std::filesystem::temp_directory_path() / "traceadapt-XXXXXX").string();
  if (::mkdtemp(pattern.data()) == nullptr) throw std::runtime_error("cannot create a temporary directory");
  return pattern;
}

/// Splits `http://host:port/path` after the authority.
std::string url_path(const std::string& url) {
  auto slash = url.find('/', url.find("://") == std::string::npos ? 0 : url.find("://") + 3);
  return slash == std::string::npos ? "/" : url.substr(slash);
}

HttpReply to_reply(const httplib::Result& res) {
  HttpReply r;
  if (!res) return r;
  r.status = res->status;
  r.body = json::parse(res->body, nullptr, false);
  if (r.body.is_discarded()) r.body = res->body;
  for (const auto& [k, v] : res->headers) r.headers[k] = v;
  return r;
}

std::string error_code(const HttpReply& r) {
  if (!r.body.is_object() || !r.body.contains("error")) return "";
  return r.body["error"].value("code", "");
}

std::string entry_body(const std::string& lot, const std::string& received_at, int grams) {
  return json{{"supplier_lot", lot},
              {"received_at", received_at},
              {"net_weight_g", grams},
              {"supplier", "urn:epc:id:pgln:5600000.00001"}}
      .dump();
}

const ledger::Transaction* find_tx(const ledger::Block& b, const std::string& tx_id) {
  for (const auto& tx : b.txs) {
    if (tx.tx_id == tx_id) return &tx;
  }
  return nullptr;
}

/// Every transaction on a channel, read as one of its members.
std::vector<std::pair<std::uint64_t, ledger::Transaction>> channel_txs(const ledger::Ledger& ledger,
                                                                      const ledger::Channel& ch) {
  std::vector<std::pair<std::uint64_t, ledger::Transaction>> out;
  if (ch.members.empty()) return out;
  const auto& reader = *ch.members.begin();
  for (std::uint64_t n = 0, h = ledger.height(ch.name); n < h; ++n) {
    auto block = ledger.get_block(ch.name, n, reader);
    for (auto& tx : block.txs) out.emplace_back(n, std::move(tx));
  }
  return out;
}

template <class F>
void scan_topic(broker::Broker& broker, const std::string& topic, F&& visit) {
  auto st = broker.stats(topic);
  auto offset = st.earliest_offset;
  while (offset < st.latest_offset) {
    std::vector<broker::Message> batch;
    try {
      batch = broker.read(topic, offset, 1024);
    } catch (const broker::BrokerError& e) {
      if (e.code() != broker::ErrorCode::OffsetOutOfRange) throw;
      offset = e.floor();
      continue;
    }
    if (batch.empty()) break;
    for (const auto& m : batch) visit(m);
    offset = batch.back().offset + 1;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Session

struct Session::Farm {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::mutex mu;
  json rows = journey_farm_rows();
  std::vector<extractors::PollSource> sources;

  Farm() {
    server.Get(R"(.*)", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu);
      json listing = rows;
      for (const auto& s : sources) {
        if (url_path(s.url) != req.path) continue;
        json shaped = json::array();
        for (auto row : rows) {
          if (!row.contains(s.cursor_field)) row[s.cursor_field] = row["id"];
          shaped.push_back(std::move(row));
        }
        listing = std::move(shaped);
        // items_path is dotted; wrap from the innermost key outwards.
        std::vector<std::string> keys;
        std::stringstream path(s.items_path);
        for (std::string k; std::getline(path, k, '.');) keys.push_back(k);
        for (auto k = keys.rbegin(); k != keys.rend(); ++k) listing = json{{*k, std::move(listing)}};
      }
      res.set_content(listing.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Farm() {
    server.stop();
    thread.join();
  }
};

Session::Session(PipelineConfig config, std::filesystem::path work_dir) : work_dir_(std::move(work_dir)) {
  if (work_dir_.empty()) {
    work_dir_ = make_temp_dir();
    owns_dir_ = true;
  }
  config.data_dir = work_dir_ / "data";
  config.server.host = "127.0.0.1";
  config.server.port = 0;
  for (auto& t : config.tenants) {
    auto user = "harness-" + t.id.str();
    auto key = new_request_id();
    t.credentials.push_back({user, "", key});
    callers_[t.id.str()] = {user, key};
  }
  farm_ = std::make_unique<Farm>();
  for (auto& s : config.poll_sources) {
    s.url = "http://127.0.0.1:" + std::to_string(farm_->port) + url_path(s.url);
    farm_->sources.push_back(s);
  }
  app_ = std::make_unique<App>(config);
  app_->start();
  server_ = std::make_unique<HttpServer>(*app_, config.server);
  server_->start();
}

Session::~Session() {
  server_.reset();
  if (app_) app_->shutdown();
  app_.reset();
  farm_.reset();
  if (owns_dir_) {
    std::error_code ec;
    std::filesystem::remove_all(work_dir_, ec);
  }
}

std::string Session::base_url() const { return server_->base_url(); }
std::string Session::username(const std::string& tenant) const { return callers_.at(tenant).first; }
std::string Session::api_key(const std::string& tenant) const { return callers_.at(tenant).second; }

HttpReply Session::post(const std::string& tenant, const std::string& path, const std::string& body) {
  return post_as(username(tenant), api_key(tenant), path, body);
}

HttpReply Session::post_as(const std::optional<std::string>& username, const std::optional<std::string>& api_key,
                           const std::string& path, const std::string& body) {
  httplib::Client client(base_url());
  client.set_tcp_nodelay(true);
  client.set_read_timeout(30s);
  httplib::Headers headers;
  if (username) headers.emplace("X-Username", *username);
  if (api_key) headers.emplace("X-Api-Key", *api_key);
  return to_reply(client.Post(path, headers, body, "application/json"));
}

HttpReply Session::get(const std::string& tenant, const std::string& path) {
  httplib::Client client(base_url());
  client.set_tcp_nodelay(true);
  client.set_read_timeout(30s);
  return to_reply(client.Get(path, {{"X-Username", username(tenant)}, {"X-Api-Key", api_key(tenant)}}));
}

HttpReply Session::upload(const std::string& tenant, const std::string& file_name, const std::string& content) {
  httplib::Client client(base_url());
  client.set_tcp_nodelay(true);
  client.set_read_timeout(30s);
  httplib::MultipartFormDataItems items = {{"file", content, file_name, "text/csv"}};
  return to_reply(
      client.Post("/upload", {{"X-Username", username(tenant)}, {"X-Api-Key", api_key(tenant)}}, items));
}

void Session::set_farm_rows(json rows) {
  std::lock_guard lock(farm_->mu);
  farm_->rows = std::move(rows);
}

std::vector<status::RequestStatus> Session::requests(const std::string& tenant) const {
  auto page = app_->status().list(TenantId{tenant}, std::nullopt, 0, 1'000'000);
  return page.items;
}

std::optional<status::RequestStatus> Session::settle(const std::string& request_id,
                                                     std::chrono::milliseconds timeout) {
  return app_->status().wait_terminal(request_id, timeout);
}

// ---------------------------------------------------------------------------
// Journey fixture

json journey_farm_rows() {
  return json::array({
      {{"id", 1}, {"lot", "H201"}, {"harvest_date", "2024-06-09"}, {"weight_g", 420000}, {"variety", "Burlat"},
       {"orchard", "north slope"}},
      {{"id", 2}, {"lot", "H202"}, {"harvest_date", "2024-06-09"}, {"weight_g", 385500}, {"variety", "Burlat"}},
      {{"id", 3}, {"lot", "H203"}, {"harvest_date", "2024-06-10"}, {"weight_g", 401250}, {"variety", "Sweetheart"},
       {"orchard", "river field"}},
  });
}

std::string seed_journey(Session& s, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  auto left = [&] {
    return std::max(std::chrono::milliseconds(1), std::chrono::duration_cast<std::chrono::milliseconds>(
                                                      deadline - std::chrono::steady_clock::now()));
  };
  auto confirm = [&](const std::string& id, const std::string& what) {
    auto st = s.settle(id, left());
    if (!st || st->state != status::State::Confirmed) {
      throw std::runtime_error(what + " did not confirm (" +
                               (st ? std::string(status::to_string(st->state)) : std::string("pending")) + ")");
    }
  };
  auto accepted = [](const HttpReply& r, const std::string& what) {
    if (r.status != 202) throw std::runtime_error(what + " answered " + std::to_string(r.status) + ": " + r.body.dump());
    return r.body["request_id"].get<std::string>();
  };

  // The farm rows arrive through the poller, which polls as soon as it starts.
  while (true) {
    auto reqs = s.requests("cmf");
    if (reqs.size() >= journey_farm_rows().size()) {
      for (const auto& r : reqs) confirm(r.request_id, "harvest " + r.request_id);
      break;
    }
    if (std::chrono::steady_clock::now() >= deadline) throw std::runtime_error("farm rows were not polled");
    std::this_thread::sleep_for(50ms);
  }

  std::vector<std::string> ids;
  ids.push_back(accepted(s.post("cf", "/entryBatch", entry_body("H201", "2024-06-09T16:00:00Z", 418000)), "entry H201"));
  ids.push_back(accepted(s.post("cf", "/entryBatch", entry_body("H202", "2024-06-09T16:20:00Z", 384000)), "entry H202"));
  for (const auto& id : ids) confirm(id, "entry");

  confirm(accepted(s.post("cf", "/manageBatches",
                          json{{"entry_batches", {"H201", "H202"}},
                               {"exit_batches", {"P501"}},
                               {"created_at", "2024-06-10T09:00:00Z"},
                               {"recipe", "cherry jam"}}
                              .dump()),
                   "manageBatches"),
          "transformation");
  confirm(accepted(s.post("cf", "/exitBatch",
                          json{{"exit_batch", "P501"},
                               {"shipped_at", "2024-06-10T15:00:00Z"},
                               {"units", 12},
                               {"destination", "urn:epc:id:sgln:5600002.00014.0"}}
                              .dump()),
                   "exitBatch"),
          "shipment");

  auto receipt = s.upload("sn", "arrivals-2024-06-11.csv",
                          "SN daily arrivals;store 014;exported 2024-06-11\nlot;received;qty\nP501;11.06.2024 08:15;12\n");
  if (receipt.status != 202 || receipt.body["accepted"].size() != 1) {
    throw std::runtime_error("arrival upload answered " + std::to_string(receipt.status) + ": " + receipt.body.dump());
  }
  confirm(receipt.body["accepted"][0]["request_id"].get<std::string>(), "arrival");
  return std::string(kProductClass) + "P501";
}

std::vector<ledger::JourneyEntry> journey_oracle(const ledger::Ledger& ledger, const std::string& epc,
                                                 const TenantId& caller) {
  std::vector<ledger::JourneyEntry> all;
  for (const auto& ch : ledger.channels()) {
    if (!ch.is_member(caller)) continue;
    for (std::uint64_t n = 0, h = ledger.height(ch.name); n < h; ++n) {
      for (const auto& tx : ledger.get_block(ch.name, n, caller).txs) all.push_back({tx.event, tx.tx_id, n, ch.name});
    }
  }
  // Close over transformation inputs until nothing new appears.
  std::set<std::string> lineage{epc};
  for (bool grew = true; grew;) {
    grew = false;
    for (const auto& e : all) {
      if (e.event.event_type != EventType::Transformation) continue;
      bool makes = std::any_of(e.event.outputs.begin(), e.event.outputs.end(),
                               [&](const std::string& o) { return lineage.count(o) != 0; });
      if (!makes) continue;
      for (const auto& in : e.event.inputs) grew |= lineage.insert(in).second;
    }
  }
  std::vector<ledger::JourneyEntry> out;
  for (const auto& e : all) {
    auto epcs = e.event.all_epcs();
    if (std::any_of(epcs.begin(), epcs.end(), [&](const std::string& x) { return lineage.count(x) != 0; })) {
      out.push_back(e);
    }
  }
  std::sort(out.begin(), out.end(), [](const ledger::JourneyEntry& a, const ledger::JourneyEntry& b) {
    return std::tie(a.event.event_time, a.channel, a.block_number, a.tx_id) <
           std::tie(b.event.event_time, b.channel, b.block_number, b.tx_id);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Isolation scan

std::vector<std::string> isolation_violations(App& app) {
  std::vector<std::string> found;
  auto& broker = app.broker();
  for (const auto& topic : broker.topics()) {
    auto name = broker::parse_topic_name(topic);
    if (!name) {
      found.push_back("topic '" + topic + "' belongs to no tenant");
      continue;
    }
    const auto owner = name->tenant.str();
    scan_topic(broker, topic, [&](const broker::Message& m) {
      auto where = topic + "@" + std::to_string(m.offset);
      auto j = json::parse(m.payload, nullptr, false);
      std::vector<std::string> tenants;
      try {
        switch (name->stage) {
          case broker::Stage::Raw:
            tenants.push_back(raw_record_from_json(j).tenant.str());
            break;
          case broker::Stage::Epcis:
            tenants.push_back(j.at("event").at("tenant").get<std::string>());
            break;
          case broker::Stage::Dlq:
            if (j.contains("record")) tenants.push_back(j["record"].at("tenant").get<std::string>());
            if (j.contains("message")) {
              auto inner = json::parse(j["message"].get<std::string>(), nullptr, false);
              if (inner.is_object() && inner.contains("event") && inner["event"].contains("tenant")) {
                tenants.push_back(inner["event"]["tenant"].get<std::string>());
              }
            }
            break;
        }
      } catch (const std::exception& e) {
        if (name->stage != broker::Stage::Dlq) found.push_back(where + " is unreadable: " + e.what());
      }
      for (const auto& t : tenants) {
        if (t != owner) found.push_back(where + " carries data of tenant '" + t + "'");
      }
    });
  }
  auto& ledger = app.ledger();
  for (const auto& ch : ledger.channels()) {
    for (const auto& [block, tx] : channel_txs(ledger, ch)) {
      TenantId author{tx.event.tenant.empty() ? std::string("unknown") : tx.event.tenant};
      if (!ch.is_member(author)) {
        found.push_back("channel " + ch.name + " block " + std::to_string(block) + " holds tx " + tx.tx_id +
                        " of non-member '" + tx.event.tenant + "'");
      }
    }
  }
  for (const auto& id : app.status().request_ids()) {
    auto st = app.status().get(id);
    if (!st || !st->block_number || !st->tx_id) continue;
    bool placed = false;
    for (const auto& ch : ledger.channels()) {
      if (!ch.is_member(st->tenant) || *st->block_number >= ledger.height(ch.name)) continue;
      if (find_tx(ledger.get_block(ch.name, *st->block_number, st->tenant), *st->tx_id)) placed = true;
    }
    if (!placed) found.push_back("request " + id + " confirmed on a channel outside tenant '" + st->tenant.str() + "'");
  }
  return found;
}

// ---------------------------------------------------------------------------
// Functional matrix

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.ok; });
}

json VerifyReport::to_json() const {
  json rows = json::array();
  for (const auto& c : checks) rows.push_back({{"row", c.row}, {"check", c.name}, {"ok", c.ok}, {"detail", c.detail}});
  return {{"passed", passed()}, {"duplicates_suppressed", duplicates_suppressed}, {"checks", rows}};
}

namespace {

class Matrix {
 public:
  Matrix(Session& s, VerifyReport& r) : s_(s), report_(r) {}

  void check(const std::string& row, std::string name, bool ok, std::string detail = {}) {
    report_.checks.push_back({row, std::move(name), ok, std::move(detail)});
    const auto& c = report_.checks.back();
    if (ok) {
      spdlog::info("[{}] {}: pass {}", row, c.name, c.detail);
    } else {
      spdlog::error("[{}] {}: FAIL {}", row, c.name, c.detail);
    }
  }

  std::string channel_of(const std::string& tenant) const {
    for (const auto& l : s_.app().config().loaders) {
      if (l.tenant.str() == tenant) return l.channel;
    }
    return "";
  }

  /// The ledger event a confirmed request produced.
  std::optional<CanonicalEvent> committed_event(const std::string& tenant, const status::RequestStatus& st) {
    if (!st.tx_id || !st.block_number) return std::nullopt;
    auto block = s_.app().ledger().get_block(channel_of(tenant), *st.block_number, TenantId{tenant});
    const auto* tx = find_tx(block, *st.tx_id);
    if (tx == nullptr) return std::nullopt;
    return tx->event;
  }

  void auth() {
    auto ok = s_.post("cf", "/entryBatch", entry_body("VA-1", "2024-06-09T16:00:00Z", 1500));
    check("auth", "valid credentials accepted", ok.status == 202 && ok.body.contains("request_id"),
          "status " + std::to_string(ok.status));
    if (ok.status == 202) auth_request_ = ok.body["request_id"].get<std::string>();

    auto wrong = s_.post_as(s_.username("cf"), "not-the-key", "/entryBatch", entry_body("VA-2", "2024-06-09T16:00:00Z", 1));
    check("auth", "wrong key rejected", wrong.status == 401 && error_code(wrong) == "invalid_credentials",
          std::to_string(wrong.status) + " " + wrong.body.dump());
    auto missing = s_.post_as(std::nullopt, std::nullopt, "/entryBatch", entry_body("VA-3", "2024-06-09T16:00:00Z", 1));
    check("auth", "missing credentials rejected",
          missing.status == 401 && error_code(missing) == "missing_credentials",
          std::to_string(missing.status) + " " + missing.body.dump());
    auto unknown = s_.post_as("nobody", "whatever", "/entryBatch", entry_body("VA-4", "2024-06-09T16:00:00Z", 1));
    check("auth", "unknown user rejected", unknown.status == 401 && error_code(unknown) == "invalid_credentials",
          std::to_string(unknown.status));

    if (!auth_request_.empty()) {
      auto foreign = s_.get("sn", "/status/" + auth_request_);
      check("auth", "status of another tenant's request refused", foreign.status == 403,
            "status " + std::to_string(foreign.status));
    }
    auto listing = s_.get("sn", "/requests?tenant=cf");
    check("auth", "listing another tenant refused", listing.status == 403, "status " + std::to_string(listing.status));
  }

  void validation() {
    auto broken = s_.post("cf", "/entryBatch", "{\n  \"supplier_lot\": \"VB-1\",\n  \"received_at\": \n}");
    auto locus = broken.body.is_object() && broken.body.contains("error") ? broken.body["error"].value("locus", "") : "";
    check("validation", "unparsable body names its position",
          broken.status == 400 && locus.find("line 4") != std::string::npos, std::to_string(broken.status) + " " + locus);

    auto missing = s_.post("cf", "/entryBatch", R"({"received_at":"2024-06-09T16:00:00Z","net_weight_g":1,"supplier":"x"})");
    check("validation", "missing field named",
          missing.status == 400 && error_code(missing) == "missing_field" &&
              missing.body["error"].dump().find("supplier_lot") != std::string::npos,
          std::to_string(missing.status) + " " + missing.body.dump());

    auto receipt = s_.upload("sn", "arrivals-mixed.csv", kMixedDailyFile);
    std::vector<int> bad_lines;
    if (receipt.status == 202) {
      for (const auto& r : receipt.body["rejected"]) bad_lines.push_back(r["line"].get<int>());
      for (const auto& a : receipt.body["accepted"]) upload_requests_.push_back(a["request_id"].get<std::string>());
    }
    check("validation", "mixed file: 8 rows accepted, lines 6 and 9 rejected",
          receipt.status == 202 && upload_requests_.size() == 8 && bad_lines == std::vector<int>{6, 9},
          std::to_string(receipt.status) + " " + receipt.body.dump());

    auto empty = s_.upload("sn", "empty.csv", "");
    check("validation", "empty file rejected", empty.status == 400, "status " + std::to_string(empty.status));
  }

  void transformation() {
    if (!auth_request_.empty()) {
      auto st = s_.settle(auth_request_);
      auto e = st ? committed_event("cf", *st) : std::nullopt;
      bool ok = e && e->epc_list == std::vector<std::string>{std::string(kFarmClass) + "VA-1"} &&
                e->attributes.count("weight") && e->attributes.at("weight").unit == "kg" &&
                e->attributes.at("weight").value == json(1.5) && format_utc(e->event_time) == "2024-06-09T16:00:00.000Z";
      check("transformation", "push mapped to a canonical event in kilograms", ok,
            e ? to_json(*e).dump() : "request did not confirm");
    }

    std::size_t confirmed = 0;
    std::optional<CanonicalEvent> first;
    for (const auto& id : upload_requests_) {
      auto st = s_.settle(id);
      if (st && st->state == status::State::Confirmed) {
        ++confirmed;
        if (!first) first = committed_event("sn", *st);
      }
    }
    bool first_ok = first && format_utc(first->event_time) == "2024-06-11T07:15:00.000Z" &&
                    first->attributes.count("quantity") && first->attributes.at("quantity").value == json(12);
    check("transformation", "file rows confirmed with local times shifted to UTC", confirmed == 8 && first_ok,
          std::to_string(confirmed) + "/8 confirmed; " + (first ? to_json(*first).dump() : "no event"));

    auto dlq_before = s_.app().broker().stats("cf.dlq").latest_offset;
    auto bad = s_.post("cf", "/entryBatch", entry_body("VT-1", "31/02/2024 25:61", 1000));
    std::optional<status::RequestStatus> st;
    if (bad.status == 202) st = s_.settle(bad.body["request_id"].get<std::string>());
    auto dlq_after = s_.app().broker().stats("cf.dlq").latest_offset;
    check("transformation", "untranslatable record fails visibly and is quarantined",
          st && st->state == status::State::Failed && !st->errors.empty() && dlq_after == dlq_before + 1,
          st ? status::to_json(*st).dump() : "status " + std::to_string(bad.status));

    std::size_t harvests = 0;
    const auto deadline = std::chrono::steady_clock::now() + 30s;
    while (std::chrono::steady_clock::now() < deadline) {
      auto reqs = s_.requests("cmf");
      harvests = std::count_if(reqs.begin(), reqs.end(),
                               [](const auto& r) { return r.state == status::State::Confirmed; });
      if (harvests >= journey_farm_rows().size()) break;
      std::this_thread::sleep_for(50ms);
    }
    check("transformation", "polled farm rows confirmed", harvests == journey_farm_rows().size(),
          std::to_string(harvests) + " confirmed");
  }

  void routing(const std::string& fault) {
    try {
      auto product = seed_journey(s_);
      auto got = s_.app().ledger().query_journey(product, TenantId{"sn"});
      auto expected = journey_oracle(s_.app().ledger(), product, TenantId{"sn"});
      std::set<std::string> steps;
      for (const auto& e : got) steps.insert(e.event.biz_step);
      bool lineage = steps == std::set<std::string>{"harvesting", "transforming", "shipping", "receiving"};
      check("routing", "retailer journey matches a full scan", got == expected && lineage,
            std::to_string(got.size()) + " entries, oracle " + std::to_string(expected.size()));

      auto via_http = s_.get("sn", "/journey/" + httplib::detail::encode_url(product));
      check("routing", "journey endpoint agrees", via_http.status == 200 && via_http.body["events"].size() == got.size(),
            "status " + std::to_string(via_http.status));
    } catch (const std::exception& e) {
      check("routing", "retailer journey matches a full scan", false, e.what());
    }

    auto peek = s_.get("sn", "/channels/" + channel_of("cf") + "/blocks/1");
    check("routing", "private channel closed to other tenants", peek.status == 403,
          "status " + std::to_string(peek.status));

    if (fault == "cross-tenant") {
      // cf's payload written into sn's intake, as a misused credential would.
      RawRecord r{new_request_id(), TenantId{"cf"}, SourceKind::HttpPush, "entryBatch", now_utc(),
                  ContentType::StructuredObject, entry_body("VX-1", "2024-06-09T16:00:00Z", 700)};
      s_.app().broker().append("sn.raw", r.request_id, to_json(r).dump());
    }
    s_.app().wait_quiescent(30s);
    auto violations = isolation_violations(s_.app());
    std::string detail = std::to_string(violations.size()) + " violations";
    for (std::size_t i = 0; i < violations.size() && i < 5; ++i) detail += "; " + violations[i];
    check("routing", "no data outside its tenant's topics and channels", violations.empty(), detail);
  }

  void duplicates(std::size_t copies) {
    const std::string lot = "VD-1";
    const std::string received = "2024-06-09T17:00:00Z";
    // Same logical event in different key orders and layouts.
    const std::vector<std::string> variants = {
        entry_body(lot, received, 2250),
        R"({"supplier":"urn:epc:id:pgln:5600000.00001","net_weight_g":2250,"received_at":")" + received +
            R"(","supplier_lot":")" + lot + R"("})",
        "{\n  \"net_weight_g\": 2250,\n  \"supplier_lot\": \"" + lot + "\",\n  \"supplier\": \"urn:epc:id:pgln:5600000.00001\",\n  \"received_at\": \"" +
            received + "\"\n}",
    };
    std::vector<std::string> ids;
    std::size_t accepted = 0;
    for (std::size_t i = 0; i < copies; ++i) {
      auto r = s_.post("cf", "/entryBatch", variants[i % variants.size()]);
      if (r.status == 202) {
        ++accepted;
        ids.push_back(r.body["request_id"].get<std::string>());
      }
    }
    std::size_t confirmed = 0, suppressed = 0;
    for (const auto& id : ids) {
      auto st = s_.settle(id);
      if (!st || st->state != status::State::Confirmed) continue;
      ++confirmed;
      if (st->history.back().detail.rfind("duplicate_suppressed", 0) == 0) ++suppressed;
    }
    std::size_t txs = 0;
    auto ch = s_.app().ledger().channel(channel_of("cf"));
    if (ch) {
      for (const auto& [block, tx] : channel_txs(s_.app().ledger(), *ch)) {
        if (tx.event.epc_list == std::vector<std::string>{std::string(kFarmClass) + lot}) ++txs;
      }
    }
    report_.duplicates_suppressed += suppressed;
    check("duplicates", std::to_string(copies) + " copies commit once", accepted == copies && confirmed == copies &&
                                                                             txs == 1 && suppressed == copies - 1,
          std::to_string(txs) + " tx, " + std::to_string(suppressed) + " suppressed, " + std::to_string(confirmed) +
              " confirmed");

    auto sn_channel = s_.app().ledger().channel(channel_of("sn"));
    auto count = [&] { return sn_channel ? channel_txs(s_.app().ledger(), *sn_channel).size() : 0; };
    auto before = count();
    auto again = s_.upload("sn", "arrivals-mixed.csv", kMixedDailyFile);
    std::size_t resuppressed = 0;
    if (again.status == 202) {
      for (const auto& a : again.body["accepted"]) {
        auto st = s_.settle(a["request_id"].get<std::string>());
        if (st && st->state == status::State::Confirmed &&
            st->history.back().detail.rfind("duplicate_suppressed", 0) == 0) {
          ++resuppressed;
        }
      }
    }
    report_.duplicates_suppressed += resuppressed;
    check("duplicates", "re-uploaded file leaves the ledger unchanged", resuppressed == 8 && count() == before,
          std::to_string(resuppressed) + " suppressed, ledger " + std::to_string(before) + " -> " +
              std::to_string(count()));
  }

 private:
  Session& s_;
  VerifyReport& report_;
  std::string auth_request_;
  std::vector<std::string> upload_requests_;
};

}  // namespace

VerifyReport run_verify(PipelineConfig config, const VerifyOptions& options) {
  VerifyReport report;
  if (!options.inject_fault.empty() && options.inject_fault != "duplicate-flood" &&
      options.inject_fault != "cross-tenant") {
    throw std::invalid_argument("unknown fault '" + options.inject_fault + "'");
  }
  std::vector<std::string> missing;
  for (const char* t : {"cmf", "cf", "sn"}) {
    if (config.tenant(TenantId{t}) == nullptr) missing.push_back(std::string("tenant ") + t);
  }
  if (!missing.empty()) {
    std::string detail;
    for (const auto& m : missing) detail += (detail.empty() ? "" : ", ") + m;
    report.checks.push_back({"setup", "config provides the three fixture organizations", false, "missing " + detail});
    return report;
  }

  Session session(std::move(config), options.work_dir);
  Matrix m(session, report);
  m.auth();
  m.validation();
  m.transformation();
  m.routing(options.inject_fault);
  m.duplicates(options.inject_fault == "duplicate-flood" ? 100 : options.duplicate_copies);
  return report;
}

}  // namespace traceadapt::orchestrator
