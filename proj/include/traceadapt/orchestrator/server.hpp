#pragma once

#include <memory>
#include <string>

#include "traceadapt/orchestrator/app.hpp"

namespace traceadapt::orchestrator {

/// HTTP front end.
///
///   POST /entryBatch /manageBatches /exitBatch   push ingestion
///   POST /direct/{endpoint}                      push path without the broker
///   POST /upload                                 multipart `file`, optional `source`
///   GET  /status/{id}  /requests  /journey/{epc}  /channels/{name}/blocks/{n}
///   GET  /metrics  /health
///
/// Everything except /metrics and /health authenticates with X-Username and
/// X-Api-Key; reads are scoped to the caller's tenant.
class HttpServer {
 public:
  HttpServer(App& app, ServerConfig config);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 takes a free port) and serves on a background thread.
  void start();
  void stop();
  int port() const { return port_; }
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  ServerConfig config_;
  int port_ = 0;
};

}  // namespace traceadapt::orchestrator
