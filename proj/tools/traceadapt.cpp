#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "traceadapt/extractors/credentials.hpp"
#include "traceadapt/orchestrator/app.hpp"
#include "traceadapt/orchestrator/config.hpp"
#include "traceadapt/orchestrator/harness.hpp"
#include "traceadapt/orchestrator/loadgen.hpp"
#include "traceadapt/orchestrator/server.hpp"

using namespace traceadapt;
using namespace traceadapt::orchestrator;
using nlohmann::json;

namespace {

std::optional<PipelineConfig> read_config(const std::string& path) {
  auto loaded = load_config(path, process_env());
  if (auto* errors = std::get_if<std::vector<ConfigError>>(&loaded)) {
    std::cerr << "config " << path << " rejected:\n" << format_errors(*errors);
    return std::nullopt;
  }
  return std::get<PipelineConfig>(std::move(loaded));
}

void write_report(const std::string& path, const json& report) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << report.dump(2) << '\n';
}

int cmd_run(const std::string& config_path) {
  auto config = read_config(config_path);
  if (!config) return 2;

  // Block the shutdown signals before any thread exists so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  App app(*config);
  app.start();
  HttpServer server(app, config->server);
  server.start();
  int sig = 0;
  sigwait(&signals, &sig);
  spdlog::info("signal {}: shutting down", sig);
  server.stop();
  bool clean = app.shutdown();
  spdlog::info(clean ? "shutdown complete" : "shutdown timed out with work in flight");
  return clean ? 0 : 1;
}

int cmd_loadgen(LoadgenOptions o, bool paired, const std::string& report_path) {
  json report;
  if (paired) {
    auto r = run_paired(o);
    report = r.to_json();
    std::cout << "direct avg " << r.direct.latency.avg_ms << " ms, through broker avg "
              << r.through_broker.latency.avg_ms << " ms, overhead " << r.overhead_pct << " %\n";
  } else {
    auto r = run_loadgen(o);
    report = r.to_json();
    std::cout << "sent " << r.sent << ", accepted " << r.accepted << ", rejected " << r.rejected << ", lost "
              << r.lost << ", p99 " << r.latency.p99_ms << " ms";
    if (r.confirmed) std::cout << ", confirmed " << *r.confirmed << ", failed " << *r.failed << ", unsettled " << *r.unsettled;
    std::cout << '\n';
  }
  write_report(report_path, report);
  if (report_path.empty()) std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_verify(const std::string& config_path, const VerifyOptions& options, const std::string& report_path) {
  auto config = read_config(config_path);
  if (!config) return 2;
  auto report = run_verify(std::move(*config), options);
  for (const auto& c : report.checks) {
    std::cout << (c.ok ? "PASS " : "FAIL ") << c.row << ": " << c.name;
    if (!c.ok) std::cout << " (" << c.detail << ")";
    std::cout << '\n';
  }
  std::cout << "duplicates suppressed: " << report.duplicates_suppressed << '\n';
  write_report(report_path, report.to_json());
  return report.passed() ? 0 : 1;
}

int cmd_status(const std::string& endpoint, const std::string& user, const std::string& key, const std::string& id,
               const std::string& state, int page, int page_size) {
  httplib::Client client(endpoint);
  httplib::Headers headers{{"X-Username", user}, {"X-Api-Key", key}};
  httplib::Result res;
  if (!id.empty()) {
    res = client.Get("/status/" + id, headers);
  } else {
    httplib::Params params{{"page", std::to_string(page)}, {"page_size", std::to_string(page_size)}};
    if (!state.empty()) params.emplace("state", state);
    res = client.Get("/requests", params, headers);
  }
  if (!res) {
    std::cerr << "no answer from " << endpoint << '\n';
    return 1;
  }
  auto body = json::parse(res->body, nullptr, false);
  std::cout << (body.is_discarded() ? res->body : body.dump(2)) << '\n';
  return res->status == 200 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Traceability adapter: ingestion, transformation and ledger loading"};
  cli.require_subcommand(1);

  std::string config_path;
  auto* run = cli.add_subcommand("run", "Serve the pipelines defined by a config");
  run->add_option("--config", config_path, "YAML config file")->required()->check(CLI::ExistingFile);

  LoadgenOptions lg;
  double duration_s = 60;
  bool paired = false;
  double verify_timeout_s = 300;
  std::string report_path;
  auto* loadgen = cli.add_subcommand("loadgen", "Drive a running service at a fixed request rate");
  loadgen->add_option("--endpoint", lg.base_url, "Service base URL")->capture_default_str();
  loadgen->add_option("--path", lg.path, "Push path")->capture_default_str();
  loadgen->add_option("--rate", lg.rate, "Requests per second")->capture_default_str()->check(CLI::PositiveNumber);
  loadgen->add_option("--duration", duration_s, "Seconds")->capture_default_str()->check(CLI::PositiveNumber);
  loadgen->add_option("--size", lg.payload_size, "Payload bytes")->capture_default_str();
  loadgen->add_option("--concurrency", lg.concurrency, "Concurrent senders")->capture_default_str();
  loadgen->add_option("--username", lg.username, "X-Username")->envname("APP_LOADGEN_USERNAME")->required();
  loadgen->add_option("--key", lg.api_key, "X-Api-Key")->envname("APP_LOADGEN_KEY")->required();
  loadgen->add_flag("--verify", lg.verify, "Wait for every accepted request to settle");
  loadgen->add_option("--verify-timeout", verify_timeout_s, "Seconds to wait in verify mode")->capture_default_str();
  loadgen->add_flag("--paired", paired, "Measure direct and through-broker paths back to back");
  loadgen->add_option("--report", report_path, "Write the JSON report here");
  loadgen->add_option("--run-id", lg.run_id, "Lot prefix; random by default");

  VerifyOptions vo;
  std::string verify_report;
  auto* verify = cli.add_subcommand("verify", "Run the functional matrix against a fresh deployment");
  verify->add_option("--config", config_path, "YAML config file")->required()->check(CLI::ExistingFile);
  verify->add_option("--inject-fault", vo.inject_fault, "Deliberate fault")
      ->check(CLI::IsMember({"duplicate-flood", "cross-tenant"}));
  verify->add_option("--work-dir", vo.work_dir, "Keep the deployment here instead of a temporary directory");
  verify->add_option("--report", verify_report, "Write the JSON report here");

  std::string endpoint = "http://127.0.0.1:8080", user, key, id, state;
  int page = 0, page_size = 50;
  auto* status = cli.add_subcommand("status", "Show one request, or list the caller's requests");
  status->add_option("--endpoint", endpoint, "Service base URL")->capture_default_str();
  status->add_option("--username", user, "X-Username")->envname("APP_USERNAME")->required();
  status->add_option("--key", key, "X-Api-Key")->envname("APP_API_KEY")->required();
  status->add_option("id", id, "Request id");
  status->add_option("--state", state, "Filter the listing by state");
  status->add_option("--page", page)->capture_default_str();
  status->add_option("--page-size", page_size)->capture_default_str();

  std::string plaintext;
  int cost = 10;
  auto* hash = cli.add_subcommand("hash-key", "Hash an API key for a config's key_hash field");
  hash->add_option("--key", plaintext, "Plaintext API key")->required();
  hash->add_option("--cost", cost, "Work factor")->capture_default_str()->check(CLI::Range(4, 20));

  CLI11_PARSE(cli, argc, argv);

  try {
    if (*run) return cmd_run(config_path);
    if (*loadgen) {
      lg.duration = std::chrono::milliseconds(static_cast<long long>(duration_s * 1000));
      lg.verify_timeout = std::chrono::milliseconds(static_cast<long long>(verify_timeout_s * 1000));
      return cmd_loadgen(lg, paired, report_path);
    }
    if (*verify) return cmd_verify(config_path, vo, verify_report);
    if (*status) return cmd_status(endpoint, user, key, id, state, page, page_size);
    if (*hash) {
      std::cout << extractors::hash_credential(plaintext, cost) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
