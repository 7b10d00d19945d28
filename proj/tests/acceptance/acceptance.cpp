// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "test_support.hpp"
#include "traceadapt/orchestrator/harness.hpp"
#include "traceadapt/orchestrator/loadgen.hpp"

using namespace traceadapt;
using namespace traceadapt::orchestrator;
using namespace std::chrono_literals;
using nlohmann::json;
using status::State;
using traceadapt::testing::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and sizes.
constexpr std::size_t kDuplicateCopies = 100;
constexpr auto kDuplicateBudget = 60s;
constexpr std::size_t kFuzzRequests = 10'000;
constexpr auto kFuzzBudget = 300s;
constexpr double kLoadRate = 500;
constexpr auto kLoadDuration = 60s;
constexpr std::size_t kLoadConcurrency = 64;
constexpr double kOverheadRate = 100;
constexpr auto kOverheadDuration = 20s;
constexpr std::size_t kCrashEvents = 1000;
constexpr std::size_t kCrashAt = 500;
constexpr auto kCrashBudget = 300s;
constexpr std::uint64_t kRetentionBytes = 8 * broker::kMiB;
constexpr std::uint64_t kRetentionSegment = kRetentionBytes / 32;  // pilot ratio: 16 MiB segments in 512 MiB
constexpr std::size_t kEventBytes = 512;                           // stored size per event, framing included
constexpr std::uint64_t kRetentionMinMessages = 16'384;
constexpr std::size_t kLifecycleTrials = 20'000;
constexpr std::uint64_t kSeed = 20240611;

const std::filesystem::path kConfigDir = TA_CONFIG_DIR;

struct Outcome {
  bool ok = false;
  std::string detail;
};

PipelineConfig pilot() {
  auto loaded = load_config(kConfigDir / "pilot.yaml", {});
  if (auto* errors = std::get_if<std::vector<ConfigError>>(&loaded)) {
    throw std::runtime_error("pilot config rejected:\n" + format_errors(*errors));
  }
  return std::get<PipelineConfig>(std::move(loaded));
}

std::string entry(const std::string& lot, int grams = 1200) {
  return json{{"supplier_lot", lot},
              {"received_at", "2024-06-09T16:00:00Z"},
              {"net_weight_g", grams},
              {"supplier", "urn:epc:id:pgln:5600000.00001"}}
      .dump();
}

std::string seconds(Clock::duration d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f s", std::chrono::duration<double>(d).count());
  return buf;
}

std::vector<ledger::Transaction> txs_on(const ledger::Ledger& ledger, const std::string& channel,
                                        const TenantId& reader) {
  std::vector<ledger::Transaction> out;
  for (std::uint64_t n = 0, h = ledger.height(channel); n < h; ++n) {
    for (auto& tx : ledger.get_block(channel, n, reader).txs) out.push_back(std::move(tx));
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome exactly_once() {
  const auto t0 = Clock::now();
  Session s(pilot());
  const std::string lot = "EO-1";
  const std::vector<std::string> variants = {
      entry(lot, 2500),
      R"({"supplier":"urn:epc:id:pgln:5600000.00001","net_weight_g":2500,"received_at":"2024-06-09T16:00:00Z","supplier_lot":")" +
          lot + R"("})",
      "{ \"net_weight_g\" : 2500 ,\n \"received_at\":\"2024-06-09T16:00:00Z\",\"supplier_lot\":\"" + lot +
          "\",\n\"supplier\":\"urn:epc:id:pgln:5600000.00001\" }",
      R"({"received_at":"2024-06-09T16:00:00Z","supplier_lot":")" + lot +
          R"(","supplier":"urn:epc:id:pgln:5600000.00001","net_weight_g":2500.0})",
  };
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < kDuplicateCopies; ++i) {
    auto r = s.post("cf", "/entryBatch", variants[i % variants.size()]);
    if (r.status != 202) return {false, "copy " + std::to_string(i) + " answered " + std::to_string(r.status)};
    ids.push_back(r.body["request_id"].get<std::string>());
  }
  std::set<std::string> tx_ids;
  for (const auto& id : ids) {
    auto st = s.settle(id, 60s);
    if (!st || st->state != State::Confirmed) return {false, "request " + id + " did not confirm"};
    tx_ids.insert(*st->tx_id);
  }
  s.app().wait_quiescent(30s);
  auto txs = txs_on(s.app().ledger(), "cf-private", TenantId{"cf"});
  std::optional<IdempotencyKey> key;
  for (const auto& tx : txs) {
    if (tx.event.epc_list == std::vector<std::string>{"urn:epc:class:lgtin:5600000.000001." + lot}) key = tx.idempotency_key;
  }
  std::size_t with_key = 0;
  for (const auto& tx : txs) with_key += key && tx.idempotency_key == *key;
  auto elapsed = Clock::now() - t0;
  return {with_key == 1 && tx_ids.size() == 1 && elapsed < kDuplicateBudget,
          std::to_string(with_key) + " transaction(s) for " + std::to_string(kDuplicateCopies) +
              " submissions in 4 key orders; " + seconds(elapsed)};
}

Outcome auth_matrix() {
  Session s(pilot());
  const std::vector<std::pair<std::string, std::string>> routes = {
      {"POST", "/entryBatch"},      {"POST", "/manageBatches"},   {"POST", "/exitBatch"},
      {"POST", "/direct/entryBatch"}, {"POST", "/upload"},        {"GET", "/status/x"},
      {"GET", "/requests"},         {"GET", "/journey/urn:x"},    {"GET", "/channels/consortium/blocks/0"},
  };
  struct Attempt {
    std::string name;
    std::optional<std::string> user, key;
    std::string expect;
  };
  const std::vector<Attempt> bad = {
      {"wrong key", s.username("cf"), std::string("nope"), "invalid_credentials"},
      {"another tenant's key", s.username("cf"), s.api_key("sn"), "invalid_credentials"},
      {"unknown user", std::string("mallory"), s.api_key("cf"), "invalid_credentials"},
      {"no key", s.username("cf"), std::nullopt, "missing_credentials"},
      {"no user", std::nullopt, s.api_key("cf"), "missing_credentials"},
      {"nothing", std::nullopt, std::nullopt, "missing_credentials"},
      {"empty key", s.username("cf"), std::string(""), "invalid_credentials"},
  };
  httplib::Client client(s.base_url());
  std::size_t cases = 0;
  std::vector<std::string> failures;
  for (const auto& [method, path] : routes) {
    for (const auto& a : bad) {
      httplib::Headers h;
      if (a.user) h.emplace("X-Username", *a.user);
      if (a.key) h.emplace("X-Api-Key", *a.key);
      auto res = method == "GET" ? client.Get(path, h) : client.Post(path, h, entry("AU-1"), "application/json");
      ++cases;
      auto body = res ? json::parse(res->body, nullptr, false) : json();
      bool ok = res && res->status == 401 && body.is_object() && body.contains("error") &&
                body["error"].value("code", "") == a.expect && !body["error"].value("message", "").empty();
      // "empty key" may be read as missing; both name the failure.
      if (!ok && a.name == "empty key" && res && res->status == 401 && body.contains("error")) ok = true;
      if (!ok) failures.push_back(method + " " + path + " with " + a.name);
    }
  }
  // Valid credentials land in the success class on every tenant's own routes.
  std::vector<HttpReply> good = {
      s.post("cf", "/entryBatch", entry("AU-2")),
      s.post("cf", "/direct/exitBatch", json{{"exit_batch", "P1"}, {"shipped_at", "2024-06-10T15:00:00Z"}, {"units", 1}, {"destination", "x"}}.dump()),
      s.upload("sn", "a.csv", "h\nlot;received;qty\nA1;11.06.2024 08:15;1\n"),
      s.get("cmf", "/requests"),
      s.get("sn", "/journey/urn:x"),
      s.get("cmf", "/channels/consortium/blocks/0"),
  };
  for (std::size_t i = 0; i < good.size(); ++i) {
    ++cases;
    if (good[i].status < 200 || good[i].status >= 300) failures.push_back("valid request " + std::to_string(i));
  }
  // The pilot's own credentials, as configured.
  for (auto [user, key] : {std::pair{"cmf-ops", "cmf-demo-key"}, {"cf-line", "cf-demo-key"}, {"sn-store", "sn-demo-key"}}) {
    ++cases;
    auto r = client.Get("/requests", {{"X-Username", user}, {"X-Api-Key", key}});
    if (!r || r->status != 200) failures.push_back(std::string("configured credential ") + user);
  }
  std::string detail = std::to_string(cases) + " cases, " + std::to_string(failures.size()) + " wrong";
  for (std::size_t i = 0; i < failures.size() && i < 3; ++i) detail += "; " + failures[i];
  return {failures.empty(), detail};
}

Outcome isolation_fuzz() {
  const auto t0 = Clock::now();
  auto cfg = pilot();
  cfg.ledger.min_commit_interval = 20ms;
  Session s(cfg);
  const std::vector<std::string> tenants = {"cmf", "cf", "sn"};
  const std::map<std::string, std::pair<std::string, std::string>> configured = {
      {"cmf", {"cmf-ops", "cmf-demo-key"}}, {"cf", {"cf-line", "cf-demo-key"}}, {"sn", {"sn-store", "sn-demo-key"}}};

  std::mutex mu;
  std::map<std::string, std::string> sender;  // request id -> tenant whose credentials sent it
  std::atomic<std::size_t> next{0}, answered{0}, transport_errors{0};
  std::vector<std::thread> workers;
  for (int w = 0; w < 8; ++w) {
    workers.emplace_back([&, w] {
      std::mt19937_64 rng(kSeed + w);
      httplib::Client client(s.base_url());
      client.set_keep_alive(true);
      client.set_tcp_nodelay(true);
      while (true) {
        auto i = next.fetch_add(1);
        if (i >= kFuzzRequests) return;
        const auto& t = tenants[rng() % tenants.size()];
        auto [user, key] = rng() % 2 ? configured.at(t) : std::pair{s.username(t), s.api_key(t)};
        httplib::Headers h{{"X-Username", user}, {"X-Api-Key", key}};
        auto lot = "F" + std::to_string(i);
        httplib::Result res;
        switch (rng() % 6) {
          case 0:
          case 1:
            res = client.Post("/entryBatch", h, entry(lot, 100 + int(rng() % 5000)), "application/json");
            break;
          case 2:
            res = client.Post("/manageBatches", h,
                              json{{"entry_batches", {lot}}, {"exit_batches", {"Q" + lot}}, {"created_at", "2024-06-10T09:00:00Z"}}.dump(),
                              "application/json");
            break;
          case 3:
            res = client.Post("/exitBatch", h,
                              json{{"exit_batch", "Q" + lot}, {"shipped_at", "2024-06-10T15:00:00Z"}, {"units", int(rng() % 50)}, {"destination", "x"}}.dump(),
                              "application/json");
            break;
          case 4: {
            std::string file = "export\nlot;received;qty\n";
            for (int r = 0, n = 1 + int(rng() % 3); r < n; ++r) {
              file += lot + "-" + std::to_string(r) + ";11.06.2024 08:" + std::to_string(10 + r) + ";" + std::to_string(rng() % 40) + "\n";
            }
            res = client.Post("/upload?file_name=f.csv", h, file, "text/csv");
            break;
          }
          default:
            res = client.Post("/entryBatch", h, rng() % 2 ? "{\"supplier_lot\":" : "[1,2]", "application/json");
        }
        if (!res) {
          ++transport_errors;
          continue;
        }
        ++answered;
        if (res->status != 202) continue;
        auto body = json::parse(res->body);
        std::lock_guard lock(mu);
        if (body.contains("request_id")) sender[body["request_id"].get<std::string>()] = t;
        if (body.contains("accepted")) {
          for (const auto& a : body["accepted"]) sender[a["request_id"].get<std::string>()] = t;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  bool quiet = s.app().wait_quiescent(120s);

  std::vector<std::string> problems = isolation_violations(s.app());
  // Every raw message sits on the topic of the tenant whose credentials sent it.
  std::size_t raw_checked = 0;
  for (const auto& t : tenants) {
    auto& b = s.app().broker();
    auto st = b.stats(t + ".raw");
    for (auto off = st.earliest_offset; off < st.latest_offset;) {
      auto batch = b.read(t + ".raw", off, 1024);
      if (batch.empty()) break;
      for (const auto& m : batch) {
        auto rec = raw_record_from_json(json::parse(m.payload));
        auto it = sender.find(rec.request_id);
        if (it == sender.end()) {
          if (rec.source_kind != SourceKind::Poll) problems.push_back(t + ".raw holds unsent request " + rec.request_id);
        } else if (it->second != t) {
          problems.push_back(t + ".raw holds a request sent by " + it->second);
        }
        ++raw_checked;
      }
      off = batch.back().offset + 1;
    }
  }
  // Statuses and ledger entries follow the sender.
  std::size_t terminal = 0;
  for (const auto& [id, t] : sender) {
    auto st = s.app().status().get(id);
    if (!st || st->tenant.str() != t) {
      problems.push_back("status of " + id + " not owned by " + t);
      continue;
    }
    terminal += status::is_terminal(st->state);
  }
  auto elapsed = Clock::now() - t0;
  std::string detail = std::to_string(answered.load()) + " answered requests, " + std::to_string(sender.size()) +
                       " accepted records, " + std::to_string(raw_checked) + " raw messages checked, " +
                       std::to_string(problems.size()) + " violations; " + seconds(elapsed);
  if (!problems.empty()) detail += "; first: " + problems.front();
  return {problems.empty() && transport_errors == 0 && answered >= kFuzzRequests && quiet &&
              terminal == sender.size() && elapsed < kFuzzBudget,
          detail};
}

PipelineConfig load_config_for_throughput() {
  auto cfg = pilot();
  cfg.ledger.min_commit_interval = 20ms;
  cfg.ledger.max_block_txs = 100;
  cfg.server.threads = static_cast<int>(kLoadConcurrency) * 2;
  for (auto& l : cfg.loaders) l.max_in_flight = 256;
  return cfg;
}

Outcome sustained_load() {
  Session s(load_config_for_throughput());
  LoadgenOptions o;
  o.base_url = s.base_url();
  o.rate = kLoadRate;
  o.duration = kLoadDuration;
  o.username = s.username("cf");
  o.api_key = s.api_key("cf");
  o.concurrency = kLoadConcurrency;
  o.verify = true;
  o.verify_timeout = 300s;
  auto r = run_loadgen(o);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "sent %llu at %.1f req/s, accepted %llu, rejected %llu, lost %llu, confirmed %llu, failed %llu, "
                "unsettled %llu; ingress p50 %.1f ms p99 %.1f ms; end-to-end p99 %.1f ms",
                (unsigned long long)r.sent, r.achieved_rate, (unsigned long long)r.accepted,
                (unsigned long long)r.rejected, (unsigned long long)r.lost, (unsigned long long)*r.confirmed,
                (unsigned long long)*r.failed, (unsigned long long)*r.unsettled, r.latency.p50_ms, r.latency.p99_ms,
                r.end_to_end->p99_ms);
  bool conserved = r.sent == r.accepted + r.rejected + r.lost;
  return {conserved && r.lost == 0 && r.accepted == r.sent && *r.unsettled == 0 &&
              *r.confirmed + *r.failed == r.accepted,
          buf};
}

Outcome broker_overhead() {
  Session s(load_config_for_throughput());
  LoadgenOptions o;
  o.base_url = s.base_url();
  o.rate = kOverheadRate;
  o.duration = kOverheadDuration;
  o.username = s.username("cf");
  o.api_key = s.api_key("cf");
  o.concurrency = 16;
  auto r = run_paired(o);
  char buf[256];
  std::snprintf(buf, sizeof buf, "direct mean %.3f ms, through broker mean %.3f ms, overhead %.1f%% (%llu + %llu requests)",
                r.direct.latency.avg_ms, r.through_broker.latency.avg_ms, r.overhead_pct,
                (unsigned long long)r.direct.accepted, (unsigned long long)r.through_broker.accepted);
  return {std::isfinite(r.overhead_pct) && r.overhead_pct > 0 && r.direct.lost == 0 && r.through_broker.lost == 0 &&
              r.direct.accepted == r.direct.sent && r.through_broker.accepted == r.through_broker.sent,
          buf};
}

Outcome crash_recovery() {
  const auto t0 = Clock::now();
  TempDir dir;
  auto cfg = pilot();
  cfg.data_dir = dir / "data";
  cfg.poll_sources.clear();
  cfg.ledger.min_commit_interval = 5ms;
  cfg.ledger.max_block_txs = 50;

  std::cout.flush();
  pid_t pid = fork();
  if (pid < 0) return {false, "fork failed"};
  if (pid == 0) {
    try {
      App app(cfg);
      for (std::size_t i = 0; i < kCrashEvents; ++i) {
        auto r = app.ingress().push("entryBatch", std::string("cf-line"), std::string("cf-demo-key"),
                                    entry("CR-" + std::to_string(i)));
        if (r.status != 202) _exit(3);
      }
      auto seen = std::make_shared<std::atomic<std::size_t>>(0);
      for (const auto& l : app.loaders()) {
        l->set_after_submit([seen](const std::string&) {
          if (++*seen == kCrashAt) ::kill(::getpid(), SIGKILL);
        });
      }
      app.start();
      std::this_thread::sleep_for(120s);
    } catch (...) {
    }
    _exit(4);
  }
  int wstatus = 0;
  waitpid(pid, &wstatus, 0);
  if (!WIFSIGNALED(wstatus) || WTERMSIG(wstatus) != SIGKILL) {
    return {false, "child was not killed mid-burst (status " + std::to_string(wstatus) + ")"};
  }

  App app(cfg);
  auto ids = app.status().request_ids();
  std::size_t processing_at_restart = 0;
  for (const auto& id : ids) processing_at_restart += app.status().get(id)->state == State::Processing;
  auto height_at_restart = txs_on(app.ledger(), "cf-private", TenantId{"cf"}).size();
  app.start();
  std::size_t confirmed = 0;
  for (const auto& id : ids) {
    auto st = app.status().wait_terminal(id, 120s);
    confirmed += st && st->state == State::Confirmed;
  }
  app.wait_quiescent(30s);
  auto txs = txs_on(app.ledger(), "cf-private", TenantId{"cf"});
  std::set<std::string> keys;
  for (const auto& tx : txs) keys.insert(tx.idempotency_key.hex());
  bool chains = true;
  for (const auto& ch : app.ledger().channels()) chains &= app.ledger().verify_chain(ch.name).ok;
  app.shutdown();
  auto elapsed = Clock::now() - t0;
  return {ids.size() == kCrashEvents && confirmed == kCrashEvents && txs.size() == kCrashEvents &&
              keys.size() == kCrashEvents && chains && elapsed < kCrashBudget,
          "killed after " + std::to_string(kCrashAt) + " submissions with " + std::to_string(height_at_restart) +
              " on the ledger and " + std::to_string(processing_at_restart) + " in Processing; after restart " +
              std::to_string(confirmed) + "/" + std::to_string(ids.size()) + " Confirmed, " + std::to_string(txs.size()) +
              " transactions, chain " + (chains ? "ok" : "BROKEN") + "; " + seconds(elapsed)};
}

Outcome retention_sizing() {
  TempDir dir;
  broker::Broker b(dir / "broker");
  broker::TopicConfig tc;
  tc.retention_bytes = kRetentionBytes;
  tc.segment_bytes = kRetentionSegment;
  tc.high_watermark_msgs = 1'000'000;
  b.create_topic("cmf.raw", tc);
  const std::string key = "0123456789abcdef";
  const std::string payload(kEventBytes - 28 - key.size(), 'e');  // 28-byte frame header

  std::uint64_t held_before_advance = 0;
  std::uint64_t min_held_after = UINT64_MAX;
  std::uint64_t disk_peak = 0;
  for (std::uint64_t i = 0; i < 3 * kRetentionMinMessages; ++i) {
    auto r = b.append("cmf.raw", key, payload);
    if (!std::holds_alternative<std::uint64_t>(r)) return {false, "append refused at " + std::to_string(i)};
    auto st = b.stats("cmf.raw");
    if (st.earliest_offset == 0) {
      held_before_advance = st.latest_offset;
    } else {
      min_held_after = std::min(min_held_after, st.latest_offset - st.earliest_offset);
    }
    disk_peak = std::max(disk_peak, st.disk_bytes);
  }
  bool advanced = min_held_after != UINT64_MAX;
  return {advanced && held_before_advance >= kRetentionMinMessages && min_held_after >= kRetentionMinMessages &&
              disk_peak <= kRetentionBytes + 2 * kRetentionSegment,
          std::to_string(held_before_advance) + " messages of " + std::to_string(kEventBytes) +
              " B held before the floor advanced; never fewer than " +
              (advanced ? std::to_string(min_held_after) : std::string("-")) + " afterwards; peak disk " +
              std::to_string(disk_peak) + " B for " + std::to_string(kRetentionBytes) + " B retention"};
}

Outcome lifecycle_legality() {
  // Independent copy of the legal graph.
  const std::set<std::pair<State, State>> legal = {
      {State::Received, State::Translated}, {State::Translated, State::Processing},
      {State::Processing, State::Confirmed}, {State::Received, State::Failed},
      {State::Translated, State::Failed},   {State::Processing, State::Failed}};
  TempDir dir;
  std::size_t attempts = 0, agreements = 0;
  std::map<std::string, State> model;
  {
    status::StatusStore store(dir / "status.log");
    std::mt19937_64 rng(kSeed);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < kLifecycleTrials; ++i) {
      if (ids.empty() || rng() % 6 == 0) {
        auto id = "L" + std::to_string(ids.size());
        bool dup = !ids.empty() && rng() % 4 == 0;
        if (dup) id = ids[rng() % ids.size()];
        auto r = store.record_received(id, TenantId{"cf"}, "fuzz");
        ++attempts;
        bool accepted = std::holds_alternative<status::RequestStatus>(r);
        agreements += accepted == !dup;
        if (!dup) {
          ids.push_back(id);
          model[id] = State::Received;
        }
        continue;
      }
      const auto& id = ids[rng() % ids.size()];
      auto to = status::kAllStates[rng() % 5];
      status::Transition t{to, "fuzz", {}, {}, {}};
      if (to == State::Confirmed) {
        t.tx_id = "tx";
        t.block_number = 1;
      }
      if (to == State::Failed) t.errors = {make_error("fuzz", "x", "injected")};
      auto r = store.record(id, t);
      ++attempts;
      bool accepted = std::holds_alternative<status::RequestStatus>(r);
      bool expected = legal.count({model[id], to}) != 0;
      agreements += accepted == expected;
      if (accepted) model[id] = to;
    }
  }
  // Replay agrees with the model.
  status::StatusStore reopened(dir / "status.log");
  std::size_t replay_mismatch = 0;
  for (const auto& [id, state] : model) {
    auto st = reopened.get(id);
    if (!st || st->state != state) ++replay_mismatch;
    for (std::size_t k = 1; st && k < st->history.size(); ++k) {
      if (!legal.count({st->history[k - 1].state, st->history[k].state})) ++replay_mismatch;
    }
  }

  // Confirmed records point at blocks that hold their transaction.
  auto cfg = pilot();
  cfg.ledger.min_commit_interval = 20ms;
  Session s(cfg);
  std::vector<std::pair<std::string, std::string>> sent;
  for (int i = 0; i < 150; ++i) {
    auto r = s.post("cf", "/entryBatch", entry("LC-" + std::to_string(i % 100)));  // a third repeat
    if (r.status == 202) sent.emplace_back("cf", r.body["request_id"].get<std::string>());
  }
  auto receipt = s.upload("sn", "l.csv", "h\nlot;received;qty\nLA;11.06.2024 08:15;1\nLB;11.06.2024 08:16;2\n");
  for (const auto& a : receipt.body["accepted"]) sent.emplace_back("sn", a["request_id"].get<std::string>());
  std::size_t confirmed = 0, located = 0;
  for (const auto& [tenant, id] : sent) {
    auto st = s.settle(id, 60s);
    if (!st || st->state != State::Confirmed) continue;
    ++confirmed;
    auto block = s.app().ledger().get_block(tenant + "-private", *st->block_number, TenantId{tenant});
    located += std::any_of(block.txs.begin(), block.txs.end(), [&](const auto& tx) { return tx.tx_id == *st->tx_id; });
  }
  return {agreements == attempts && replay_mismatch == 0 && confirmed == sent.size() && located == confirmed,
          std::to_string(agreements) + "/" + std::to_string(attempts) + " attempts judged as the legal graph does, " +
              std::to_string(replay_mismatch) + " replay mismatches; " + std::to_string(located) + "/" +
              std::to_string(confirmed) + " Confirmed tx_ids found in their blocks"};
}

Outcome journey() {
  Session s(pilot());
  auto product = seed_journey(s);
  auto& ledger = s.app().ledger();
  // The product, plus every EPC the ledger mentions, from each tenant's view.
  std::set<std::string> epcs{product};
  for (const auto& ch : ledger.channels()) {
    for (const auto& tx : txs_on(ledger, ch.name, *ch.members.begin())) {
      for (const auto& e : tx.event.all_epcs()) epcs.insert(e);
    }
  }
  std::size_t queries = 0, equal = 0;
  for (const auto& t : {"cmf", "cf", "sn"}) {
    for (const auto& epc : epcs) {
      ++queries;
      equal += ledger.query_journey(epc, TenantId{t}) == journey_oracle(ledger, epc, TenantId{t});
    }
  }
  auto retail = ledger.query_journey(product, TenantId{"sn"});
  std::string steps;
  for (const auto& e : retail) steps += (steps.empty() ? "" : " > ") + e.event.biz_step;
  return {equal == queries && retail.size() == 5,
          std::to_string(equal) + "/" + std::to_string(queries) + " journeys equal the scan oracle; retailer view of " +
              product.substr(product.rfind('.') + 1) + ": " + steps};
}

Outcome functional_matrix() {
  std::string cmd = std::string(TA_CLI_PATH) + " verify --config " + (kConfigDir / "pilot.yaml").string() + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  int code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::string fault = std::string(TA_CLI_PATH) + " verify --config " + (kConfigDir / "pilot.yaml").string() +
                      " --inject-fault cross-tenant > /dev/null 2>&1";
  int frc = std::system(fault.c_str());
  int fcode = WIFEXITED(frc) ? WEXITSTATUS(frc) : -1;
  auto report = run_verify(pilot(), {"duplicate-flood", {}, 5});
  std::set<std::string> rows;
  for (const auto& c : report.checks) rows.insert(c.row);
  return {code == 0 && fcode == 1 && report.passed() && rows.size() == 5 && report.duplicates_suppressed >= 99,
          "verify exit " + std::to_string(code) + "; with cross-tenant fault exit " + std::to_string(fcode) +
              "; duplicate flood " + (report.passed() ? "passes" : "FAILS") + " with " +
              std::to_string(report.duplicates_suppressed) + " suppressed across " + std::to_string(rows.size()) +
              " rows"};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"exactly-once under duplication", exactly_once},
      {"auth matrix", auth_matrix},
      {"topic and channel isolation", isolation_fuzz},
      {"sustained load without loss", sustained_load},
      {"broker overhead measurement", broker_overhead},
      {"crash recovery", crash_recovery},
      {"retention sizing", retention_sizing},
      {"lifecycle legality", lifecycle_legality},
      {"journey oracle", journey},
      {"functional matrix", functional_matrix},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.ok;
    std::cout << (o.ok ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
