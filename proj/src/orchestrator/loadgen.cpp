#include "traceadapt/orchestrator/loadgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include <httplib.h>

#include "traceadapt/core/time.hpp"

namespace traceadapt::orchestrator {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double nearest_rank(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0;
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

json latency_json(const LatencySummary& l) {
  return {{"samples", l.samples}, {"avg_ms", l.avg_ms}, {"p50_ms", l.p50_ms},
          {"p95_ms", l.p95_ms},   {"p99_ms", l.p99_ms}, {"max_ms", l.max_ms}};
}

std::string random_run_id() {
  std::random_device rd;
  static const char* kAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string id = "LG";
  for (int i = 0; i < 8; ++i) id += kAlphabet[rd() % 36];
  return id;
}

httplib::Headers auth_headers(const LoadgenOptions& o) {
  return {{"X-Username", o.username}, {"X-Api-Key", o.api_key}};
}

struct WorkerResult {
  std::vector<double> latencies;
  std::map<int, std::uint64_t> by_status;
  std::uint64_t lost = 0;
  std::vector<std::pair<std::uint64_t, std::string>> ids;
};

void verify_settlement(const LoadgenOptions& o, LoadReport& report) {
  httplib::Client client(o.base_url);
  client.set_keep_alive(true);
  client.set_tcp_nodelay(true);
  client.set_read_timeout(std::chrono::seconds(10));
  std::vector<std::string> pending = report.request_ids;
  std::vector<double> e2e;
  std::uint64_t confirmed = 0, failed = 0;
  const auto deadline = Clock::now() + o.verify_timeout;
  while (!pending.empty() && Clock::now() < deadline) {
    std::vector<std::string> still;
    for (const auto& id : pending) {
      auto res = client.Get("/status/" + id, auth_headers(o));
      if (!res || res->status != 200) {
        still.push_back(id);
        continue;
      }
      auto body = json::parse(res->body, nullptr, false);
      auto state = body.is_object() ? body.value("state", "") : "";
      if (state == "Confirmed" || state == "Failed") {
        (state == "Confirmed" ? confirmed : failed)++;
        const auto& h = body["history"];
        auto t0 = parse_iso8601(h.front().value("at", ""));
        auto t1 = parse_iso8601(h.back().value("at", ""));
        if (state == "Confirmed" && t0 && t1) {
          e2e.push_back(std::chrono::duration<double, std::milli>(*t1 - *t0).count());
        }
      } else {
        still.push_back(id);
      }
    }
    pending.swap(still);
    if (!pending.empty()) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  report.confirmed = confirmed;
  report.failed = failed;
  report.unsettled = pending.size();
  report.end_to_end = summarize(std::move(e2e));
}

}  // namespace

LatencySummary summarize(std::vector<double> samples) {
  LatencySummary s;
  s.samples = samples.size();
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  s.avg_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  s.p50_ms = nearest_rank(samples, 0.50);
  s.p95_ms = nearest_rank(samples, 0.95);
  s.p99_ms = nearest_rank(samples, 0.99);
  s.max_ms = samples.back();
  return s;
}

json LoadReport::to_json() const {
  json codes = json::object();
  for (const auto& [code, n] : by_status) codes[std::to_string(code)] = n;
  json j = {{"path", path},
            {"target_rate", target_rate},
            {"duration_s", duration_s},
            {"achieved_rate", achieved_rate},
            {"sent", sent},
            {"accepted", accepted},
            {"rejected", rejected},
            {"lost", lost},
            {"by_status", codes},
            {"latency", latency_json(latency)}};
  if (confirmed) {
    j["verify"] = {{"confirmed", *confirmed},
                   {"failed", *failed},
                   {"unsettled", *unsettled},
                   {"end_to_end", latency_json(*end_to_end)}};
  }
  return j;
}

json OverheadReport::to_json() const {
  return {{"direct", direct.to_json()}, {"through_broker", through_broker.to_json()}, {"overhead_pct", overhead_pct}};
}

std::string loadgen_payload(const std::string& run_id, std::uint64_t n, std::size_t size) {
  json body = {{"supplier_lot", run_id + "-" + std::to_string(n)},
               {"received_at", format_utc(now_utc())},
               {"net_weight_g", 1000 + static_cast<int>(n % 9000)},
               {"supplier", "urn:epc:id:pgln:5600000.00001"},
               {"note", ""}};
  auto base = body.dump().size();
  if (size > base) body["note"] = std::string(size - base, 'x');
  return body.dump();
}

LoadReport run_loadgen(const LoadgenOptions& o) {
  if (o.rate <= 0) throw std::invalid_argument("rate must be positive");
  const auto run_id = o.run_id.empty() ? random_run_id() : o.run_id;
  const auto total = static_cast<std::uint64_t>(std::llround(o.rate * std::chrono::duration<double>(o.duration).count()));
  const auto interval = std::chrono::duration<double>(1.0 / o.rate);

  {
    // Fail fast on an unreachable endpoint instead of counting every request as lost.
    httplib::Client probe(o.base_url);
    probe.set_connection_timeout(std::chrono::seconds(3));
    if (!probe.Get("/health")) throw std::runtime_error("endpoint unreachable: " + o.base_url);
  }

  std::atomic<std::uint64_t> next{0};
  const auto start = Clock::now() + std::chrono::milliseconds(50);
  std::vector<WorkerResult> results(std::max<std::size_t>(1, o.concurrency));
  std::vector<std::thread> workers;
  for (auto& r : results) {
    workers.emplace_back([&, out = &r] {
      httplib::Client client(o.base_url);
      client.set_keep_alive(true);
      client.set_tcp_nodelay(true);
      client.set_connection_timeout(std::chrono::seconds(5));
      client.set_read_timeout(std::chrono::seconds(30));
      auto headers = auth_headers(o);
      while (true) {
        auto i = next.fetch_add(1);
        if (i >= total) return;
        std::this_thread::sleep_until(start + std::chrono::duration_cast<Clock::duration>(interval * double(i)));
        auto body = loadgen_payload(run_id, i, o.payload_size);
        auto t0 = Clock::now();
        auto res = client.Post(o.path, headers, body, "application/json");
        auto ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        if (!res) {
          ++out->lost;
          continue;
        }
        out->latencies.push_back(ms);
        ++out->by_status[res->status];
        if (res->status >= 200 && res->status < 300) {
          auto j = json::parse(res->body, nullptr, false);
          if (j.is_object() && j.contains("request_id")) out->ids.emplace_back(i, j["request_id"].get<std::string>());
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  const auto elapsed = std::chrono::duration<double>(Clock::now() - start).count();

  LoadReport report;
  report.path = o.path;
  report.target_rate = o.rate;
  report.duration_s = std::chrono::duration<double>(o.duration).count();
  report.sent = total;
  std::vector<double> latencies;
  std::vector<std::pair<std::uint64_t, std::string>> ids;
  for (auto& r : results) {
    latencies.insert(latencies.end(), r.latencies.begin(), r.latencies.end());
    for (const auto& [code, n] : r.by_status) {
      report.by_status[code] += n;
      if (code >= 200 && code < 300) report.accepted += n;
      else report.rejected += n;
    }
    report.lost += r.lost;
    ids.insert(ids.end(), r.ids.begin(), r.ids.end());
  }
  std::sort(ids.begin(), ids.end());
  for (auto& [i, id] : ids) report.request_ids.push_back(std::move(id));
  report.achieved_rate = elapsed > 0 ? static_cast<double>(total) / elapsed : 0;
  report.latency = summarize(std::move(latencies));
  if (o.verify) verify_settlement(o, report);
  return report;
}

OverheadReport run_paired(const LoadgenOptions& o) {
  OverheadReport r;
  auto direct = o;
  direct.path = "/direct" + o.path;
  direct.verify = false;
  r.direct = run_loadgen(direct);
  r.through_broker = run_loadgen(o);
  const double base = r.direct.latency.avg_ms;
  r.overhead_pct = base > 0 ? (r.through_broker.latency.avg_ms - base) / base * 100.0 : 0;
  return r;
}

}  // namespace traceadapt::orchestrator
