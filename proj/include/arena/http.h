#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "arena/oracle.h"

namespace arena {

// Client side of the label API:
//   GET  /health  -> "ok"
//   GET  /meta    -> "H W C K"
//   POST /predict -> decimal class index (body: AVT1 tensor)
// 5xx becomes ModelError, 429 QueryRefused, a read timeout OracleTimeout.
class HttpOracle : public DecisionOracle {
 public:
  // Fetches /meta; throws std::runtime_error when the endpoint is down.
  explicit HttpOracle(std::string url,
                      std::chrono::milliseconds timeout = std::chrono::milliseconds{500});

  Shape shape() const override { return shape_; }
  int num_classes() const override { return num_classes_; }
  int predict(const Image& image) const override;

  bool healthy() const;
  const std::string& url() const { return url_; }

 private:
  std::string url_;
  std::chrono::milliseconds timeout_;
  Shape shape_;
  int num_classes_ = 0;
};

// Serves a DecisionOracle over the label API on a background thread. With
// a query budget, every /predict passes through one shared QueryMeter and
// refused queries answer 429; the served oracle never sees budget state.
class OracleServer {
 public:
  explicit OracleServer(const DecisionOracle& oracle, int query_budget = -1,
                        std::chrono::milliseconds query_timeout = kDefaultQueryTimeout);
  ~OracleServer();

  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  // Binds (port 0 picks a free port) and starts serving. Returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Serves on the calling thread until stop() is called from elsewhere.
  void run(const std::string& host, int port);
  void stop();

  std::string url() const;
  // Queries forwarded through the meter; 0 when unmetered.
  int queries_used() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace arena
