#include "traceadapt/orchestrator/server.hpp"

#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace traceadapt::orchestrator {

using nlohmann::json;

namespace {

std::optional<std::string> header(const httplib::Request& req, const char* name) {
  if (!req.has_header(name)) return std::nullopt;
  return req.get_header_value(name);
}

void send(httplib::Response& res, const extractors::Reply& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  res.set_content(r.body.dump(), "application/json");
}

void send(httplib::Response& res, int status, const json& body) { send(res, {status, body, {}}); }

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& locus,
                const std::string& message) {
  send(res, status, extractors::error_body(make_error(code, locus, message)));
}

json journey_json(const std::string& epc, const std::vector<ledger::JourneyEntry>& entries) {
  json events = json::array();
  for (const auto& e : entries) {
    events.push_back(
        {{"channel", e.channel}, {"block_number", e.block_number}, {"tx_id", e.tx_id}, {"event", to_json(e.event)}});
  }
  return {{"epc", epc}, {"events", std::move(events)}};
}

std::optional<std::size_t> parse_index(const std::string& text) {
  if (text.empty() || text.size() > 18 || text.find_first_not_of("0123456789") != std::string::npos) {
    return std::nullopt;
  }
  return std::stoull(text);
}

}  // namespace

struct HttpServer::Impl {
  App& app;
  httplib::Server server;
  std::thread thread;

  explicit Impl(App& a) : app(a) {}

  /// Resolves the caller or writes the 401 reply.
  std::optional<TenantId> caller(const httplib::Request& req, httplib::Response& res) {
    auto auth = app.credentials().authenticate(header(req, "X-Username"), header(req, "X-Api-Key"));
    if (auto* t = std::get_if<TenantId>(&auth)) return *t;
    if (std::get<extractors::AuthFailure>(auth) == extractors::AuthFailure::MissingCredentials) {
      send_error(res, 401, "missing_credentials", "headers", "X-Username and X-Api-Key headers are required");
    } else {
      send_error(res, 401, "invalid_credentials", "headers", "unknown username or wrong API key");
    }
    return std::nullopt;
  }

  void routes() {
    for (const char* endpoint : {"entryBatch", "manageBatches", "exitBatch"}) {
      std::string name = endpoint;
      server.Post("/" + name, [this, name](const httplib::Request& req, httplib::Response& res) {
        send(res, app.ingress().push(name, header(req, "X-Username"), header(req, "X-Api-Key"), req.body));
      });
      server.Post("/direct/" + name, [this, name](const httplib::Request& req, httplib::Response& res) {
        send(res, app.ingress().direct(name, header(req, "X-Username"), header(req, "X-Api-Key"), req.body));
      });
    }

    server.Post("/upload", [this](const httplib::Request& req, httplib::Response& res) {
      std::string file_name = req.get_param_value("file_name");
      std::string source = req.get_param_value("source");
      std::string content = req.body;
      if (req.is_multipart_form_data()) {
        if (!req.has_file("file")) {
          if (!caller(req, res)) return;
          return send_error(res, 400, "missing_field", "file", "multipart field 'file' is required");
        }
        auto f = req.get_file_value("file");
        file_name = f.filename;
        content = f.content;
        if (req.has_file("source")) source = req.get_file_value("source").content;
      }
      send(res, app.ingress().upload(header(req, "X-Username"), header(req, "X-Api-Key"), file_name, content, source));
    });

    server.Get(R"(/status/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto who = caller(req, res);
      if (!who) return;
      auto found = app.status().get_for(req.matches[1], *who);
      if (auto* s = std::get_if<status::RequestStatus>(&found)) return send(res, 200, to_json(*s));
      if (std::get<status::AccessError>(found) == status::AccessError::Denied) {
        return send_error(res, 403, "forbidden", "request_id", "request belongs to another tenant");
      }
      send_error(res, 404, "not_found", "request_id", "unknown request id");
    });

    server.Get("/requests", [this](const httplib::Request& req, httplib::Response& res) {
      auto who = caller(req, res);
      if (!who) return;
      if (req.has_param("tenant") && req.get_param_value("tenant") != who->str()) {
        return send_error(res, 403, "forbidden", "tenant", "listing is limited to the caller's tenant");
      }
      std::optional<status::State> filter;
      if (req.has_param("state")) {
        filter = status::parse_state(req.get_param_value("state"));
        if (!filter) return send_error(res, 400, "bad_value", "state", "unknown state");
      }
      auto page = req.has_param("page") ? parse_index(req.get_param_value("page")) : std::optional<std::size_t>(0);
      auto size =
          req.has_param("page_size") ? parse_index(req.get_param_value("page_size")) : std::optional<std::size_t>(50);
      if (!page) return send_error(res, 400, "bad_value", "page", "page must be a non-negative integer");
      if (!size || *size == 0 || *size > 1000) return send_error(res, 400, "bad_value", "page_size", "must be 1..1000");
      auto p = app.status().list(*who, filter, *page, *size);
      json items = json::array();
      for (const auto& s : p.items) items.push_back(to_json(s));
      send(res, 200,
           {{"tenant", who->str()}, {"page", p.page}, {"page_size", p.page_size}, {"total", p.total}, {"items", items}});
    });

    server.Get(R"(/journey/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto who = caller(req, res);
      if (!who) return;
      auto epc = httplib::detail::decode_url(req.matches[1], false);
      send(res, 200, journey_json(epc, app.ledger().query_journey(epc, *who)));
    });

    server.Get(R"(/channels/([^/]+)/blocks/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto who = caller(req, res);
      if (!who) return;
      auto n = parse_index(req.matches[2]);
      if (!n) return send_error(res, 400, "bad_value", "block", "block number out of range");
      try {
        send(res, 200, ledger::to_json(app.ledger().get_block(req.matches[1], *n, *who)));
      } catch (const ledger::LedgerError& e) {
        if (e.code() == ledger::ErrorCode::AccessDenied) return send_error(res, 403, "forbidden", "channel", e.what());
        send_error(res, 404, "not_found", "channel", e.what());
      }
    });

    server.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(app.metrics_text(), "text/plain; version=0.0.4");
    });
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      send(res, 200, {{"status", "ok"}});
    });

    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Username, X-Api-Key");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    });
    server.set_exception_handler([](const httplib::Request& req, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "unknown error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      spdlog::error("{} {}: {}", req.method, req.path, what);
      send_error(res, 500, "internal", "server", "internal error");
    });
  }
};

HttpServer::HttpServer(App& app, ServerConfig config)
    : impl_(std::make_unique<Impl>(app)), config_(std::move(config)) {
  const auto threads = static_cast<std::size_t>(config_.threads);
  impl_->server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  impl_->server.set_payload_max_length(config_.max_body_bytes * 4 + 64 * 1024);
  impl_->server.set_keep_alive_max_count(100000);
  impl_->server.set_tcp_nodelay(true);
  impl_->routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::start() {
  if (impl_->thread.joinable()) return;
  if (config_.port == 0) {
    port_ = impl_->server.bind_to_any_port(config_.host);
  } else {
    port_ = impl_->server.bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ <= 0) throw std::runtime_error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  spdlog::info("listening on {}", base_url());
}

void HttpServer::stop() {
  if (!impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

std::string HttpServer::base_url() const { return "http://" + config_.host + ":" + std::to_string(port_); }

}  // namespace traceadapt::orchestrator
