#include "arena/http.h"

#include <httplib.h>

#include <mutex>
#include <sstream>
#include <thread>

namespace arena {

HttpOracle::HttpOracle(std::string url, std::chrono::milliseconds timeout)
    : url_(std::move(url)), timeout_(timeout) {
  httplib::Client cli(url_);
  cli.set_connection_timeout(std::chrono::seconds{5});
  cli.set_read_timeout(std::chrono::seconds{5});
  auto res = cli.Get("/meta");
  if (!res || res->status != 200) {
    throw std::runtime_error("model endpoint " + url_ + " did not answer /meta");
  }
  std::istringstream in(res->body);
  long h = 0, w = 0, c = 0;
  if (!(in >> h >> w >> c >> num_classes_) || h <= 0 || w <= 0 || c <= 0 || num_classes_ < 2) {
    throw std::runtime_error("malformed /meta from " + url_ + ": " + res->body);
  }
  shape_ = {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w),
            static_cast<std::uint32_t>(c)};
  validate_shape(shape_);
}

bool HttpOracle::healthy() const {
  httplib::Client cli(url_);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  auto res = cli.Get("/health");
  return res && res->status == 200 && res->body == "ok";
}

int HttpOracle::predict(const Image& image) const {
  // One client per call keeps concurrent predictions independent.
  httplib::Client cli(url_);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  cli.set_write_timeout(timeout_);
  auto res = cli.Post("/predict", write_tensor(image), "application/octet-stream");
  if (!res) {
    if (res.error() == httplib::Error::Read) throw OracleTimeout("no answer from " + url_);
    throw ModelError("request to " + url_ + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 429) throw QueryRefused("query budget exhausted");
  if (res->status == 504) throw OracleTimeout("model endpoint timed out");
  if (res->status != 200) {
    throw ModelError("model endpoint answered " + std::to_string(res->status));
  }
  std::size_t used = 0;
  int label = 0;
  try {
    label = std::stoi(res->body, &used);
  } catch (const std::exception&) {
    throw ModelError("non-numeric label: " + res->body);
  }
  if (used != res->body.size()) throw ModelError("non-numeric label: " + res->body);
  return label;
}

struct OracleServer::Impl {
  const DecisionOracle& oracle;
  std::chrono::milliseconds query_timeout;
  std::unique_ptr<QueryMeter> meter;
  mutable std::mutex meter_mutex;
  httplib::Server server;
  std::thread thread;
  std::string host;
  int port = 0;

  Impl(const DecisionOracle& o, int budget, std::chrono::milliseconds timeout)
      : oracle(o), query_timeout(timeout) {
    if (budget >= 0) meter = std::make_unique<QueryMeter>(oracle, budget, timeout);
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("ok", "text/plain");
    });
    server.Get("/meta", [this](const httplib::Request&, httplib::Response& res) {
      const Shape s = oracle.shape();
      std::ostringstream out;
      out << s.height << ' ' << s.width << ' ' << s.channels << ' ' << oracle.num_classes();
      res.set_content(out.str(), "text/plain");
    });
    server.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
      Image image;
      try {
        image = read_tensor(req.body);
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(e.what(), "text/plain");
        return;
      }
      Verdict v = Verdict::of_error(VerdictError::model_error);
      if (meter) {
        std::lock_guard lock(meter_mutex);
        v = meter->predict(image);
      } else {
        v = guarded_predict(oracle, image, query_timeout);
      }
      if (v.ok()) {
        res.set_content(std::to_string(v.label()), "text/plain");
        return;
      }
      switch (v.error()) {
        case VerdictError::invalid_input: res.status = 400; break;
        case VerdictError::budget_exhausted: res.status = 429; break;
        case VerdictError::timeout: res.status = 504; break;
        case VerdictError::model_error: res.status = 500; break;
      }
      res.set_content(to_string(v.error()), "text/plain");
    });
  }
};

OracleServer::OracleServer(const DecisionOracle& oracle, int query_budget,
                           std::chrono::milliseconds query_timeout)
    : impl_(std::make_unique<Impl>(oracle, query_budget, query_timeout)) {}

OracleServer::~OracleServer() { stop(); }

int OracleServer::start(const std::string& host, int port) {
  impl_->host = host;
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else if (impl_->server.bind_to_port(host, port)) {
    impl_->port = port;
  } else {
    impl_->port = -1;
  }
  if (impl_->port <= 0) throw std::runtime_error("cannot bind oracle server on " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void OracleServer::run(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port;
  if (!impl_->server.listen(host, port)) {
    throw std::runtime_error("cannot serve on " + host + ":" + std::to_string(port));
  }
}

void OracleServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string OracleServer::url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

int OracleServer::queries_used() const {
  if (!impl_->meter) return 0;
  std::lock_guard lock(impl_->meter_mutex);
  return impl_->meter->used();
}

}  // namespace arena
