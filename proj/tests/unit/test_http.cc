#include <doctest.h>

#include <httplib.h>

#include "arena/http.h"
#include "arena/models.h"
#include "support.h"

using namespace arena;

TEST_CASE("served model answers like the in-process model") {
  const auto& ref = testing::reference();
  OracleServer server(*ref.model);
  server.start();
  HttpOracle remote(server.url());
  CHECK(remote.healthy());
  CHECK(remote.shape() == ref.model->shape());
  CHECK(remote.num_classes() == ref.model->num_classes());
  for (const auto& s : ref.test.samples()) CHECK(remote.predict(s.image) == ref.model->predict(s.image));
  CHECK(server.queries_used() == 0);
}

TEST_CASE("metered server refuses past its budget") {
  const auto& ref = testing::reference();
  OracleServer server(*ref.model, 2);
  server.start();
  HttpOracle remote(server.url());
  const Image x = ref.test[0].image;
  CHECK_NOTHROW(remote.predict(x));
  CHECK_NOTHROW(remote.predict(x));
  CHECK_THROWS_AS(remote.predict(x), QueryRefused);
  CHECK(server.queries_used() == 2);
  QueryMeter client_meter(remote, 10);
  CHECK(client_meter.predict(x) == Verdict::of_error(VerdictError::budget_exhausted));
}

TEST_CASE("model failures and malformed bodies") {
  const Shape shape{4, 4, 1};
  testing::ThrowingModel thrower(shape);
  OracleServer server(thrower);
  server.start();
  HttpOracle remote(server.url());
  CHECK_THROWS_AS(remote.predict(grey_image(shape)), ModelError);
  CHECK(guarded_predict(remote, grey_image(shape)) == Verdict::of_error(VerdictError::model_error));

  httplib::Client raw("127.0.0.1", std::stoi(server.url().substr(server.url().rfind(':') + 1)));
  auto res = raw.Post("/predict", "not a tensor", "application/octet-stream");
  REQUIRE(res);
  CHECK(res->status == 400);
  auto meta = raw.Get("/meta");
  REQUIRE(meta);
  CHECK(meta->body == "4 4 1 2");
}

TEST_CASE("slow endpoint maps to timeout") {
  const Shape shape{4, 4, 1};
  testing::SlowModel slow(shape, std::chrono::milliseconds(300));
  OracleServer server(slow, -1, std::chrono::milliseconds(5000));
  server.start();
  HttpOracle remote(server.url(), std::chrono::milliseconds(50));
  CHECK(guarded_predict(remote, grey_image(shape), std::chrono::milliseconds(1000)) ==
        Verdict::of_error(VerdictError::timeout));
}

TEST_CASE("unreachable endpoint") {
  CHECK_THROWS(HttpOracle("http://127.0.0.1:1", std::chrono::milliseconds(100)));
}
