// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <httplib.h>

#include <chrono>
#include <nlohmann/json.hpp>
#include <thread>

#include "support.hpp"
#include "vcb/backends.hpp"
#include "vcb/service.hpp"

using namespace vcb;
using json = nlohmann::json;
using vcb::testing::make_png;
using vcb::testing::TempDir;

namespace {

struct Server {
  TempDir dir;
  BackendSet backends = make_backends(BackendConfig{});
  Service service{backends, {dir / "store", dir / "cache"}};
  int port = service.start_background();
  httplib::Client client{"127.0.0.1", port};

  std::string upload(const ImageRef& image, int expect_status = 0) {
    httplib::MultipartFormDataItems items = {
        {"file", std::string(image.bytes().begin(), image.bytes().end()), "x.png", "image/png"}};
    auto res = client.Post("/v1/images", items);
    REQUIRE(res);
    if (expect_status) CHECK(res->status == expect_status);
    return json::parse(res->body).value("sha256", "");
  }
  std::pair<int, json> post(const std::string& path, const json& body) {
    auto res = client.Post(path, body.dump(), "application/json");
    REQUIRE(res);
    return {res->status, res->body.empty() ? json() : json::parse(res->body)};
  }
  std::pair<int, json> get(const std::string& path) {
    auto res = client.Get(path);
    REQUIRE(res);
    const bool is_json = res->get_header_value("Content-Type") == "application/json";
    return {res->status, is_json ? json::parse(res->body) : json(res->body)};
  }
  json wait_job(const std::string& id) {
    for (int i = 0; i < 2000; ++i) {
      auto [status, job] = get("/v1/jobs/" + id);
      REQUIRE(status == 200);
      if (job["state"] == "done" || job["state"] == "failed") return job;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    FAIL("job did not finish");
    return {};
  }
};

json settings(int seed) { return {{"seed", seed}, {"width", 32}, {"height", 32}}; }

}  // namespace

TEST_CASE("health reports the mock backend") {
  Server s;
  auto [status, body] = s.get("/v1/healthz");
  CHECK(status == 200);
  CHECK(body["backend"] == "mock");
  CHECK(body["ready"] == true);
  CHECK(body["weights_required"] == false);
}

TEST_CASE("image upload is content addressed") {
  Server s;
  const ImageRef img = make_png(8, 8, 1);
  CHECK(s.upload(img, 201) == img.sha256());
  CHECK(s.upload(img, 200) == img.sha256());
  auto res = s.client.Get("/v1/images/" + img.sha256());
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body == std::string(img.bytes().begin(), img.bytes().end()));
  CHECK(s.client.Get("/v1/images/" + std::string(64, 'a'))->status == 404);

  httplib::MultipartFormDataItems junk = {{"file", "not an image", "x.bin", "application/octet-stream"}};
  CHECK(s.client.Post("/v1/images", junk)->status == 400);
  CHECK(s.client.Post("/v1/images", "{}", "application/json")->status == 400);
}

TEST_CASE("blend job lifecycle") {
  Server s;
  const std::string src = s.upload(make_png(16, 16, 1));
  const std::string a = s.upload(make_png(16, 16, 2));
  const std::string b = s.upload(make_png(16, 16, 3));
  auto [status, body] = s.post("/v1/jobs/blend", {{"source_sha", src}, {"ref_a_sha", a}, {"ref_b_sha", b},
                                                  {"mode", "common"}, {"theta", 0.4}, {"d", 0.0},
                                                  {"settings", settings(3)}});
  REQUIRE(status == 202);
  const json job = s.wait_job(body["job_id"]);
  CHECK(job["state"] == "done");
  CHECK(job["progress"]["completed"] == 1);
  REQUIRE(job["result"]["run_ids"].size() == 1);
  const std::string run_id = job["result"]["run_ids"][0];

  auto [rs, record] = s.get("/v1/runs/" + run_id);
  CHECK(rs == 200);
  CHECK(record["run_id"] == run_id);
  auto image = s.client.Get("/v1/runs/" + run_id + "/image");
  CHECK(image->status == 200);
  CHECK(image->get_header_value("Content-Type") == "image/png");
  CHECK(s.get("/v1/runs/nope").first == 404);
  CHECK(s.get("/v1/jobs/nope").first == 404);
}

TEST_CASE("baseline blend without references") {
  Server s;
  const std::string src = s.upload(make_png(16, 16, 1));
  auto [status, body] = s.post("/v1/jobs/blend", {{"source_sha", src}, {"settings", settings(1)}});
  REQUIRE(status == 202);
  CHECK(s.wait_job(body["job_id"])["state"] == "done");
}

TEST_CASE("request validation errors name the field") {
  Server s;
  const std::string src = s.upload(make_png(16, 16, 1));
  const std::string a = s.upload(make_png(16, 16, 2));
  auto field = [&](const json& body) {
    auto [status, err] = s.post("/v1/jobs/blend", body);
    return std::make_pair(status, err.value("field", ""));
  };
  CHECK(field({{"source_sha", src}, {"ref_a_sha", a}, {"mode", "common"}, {"theta", 0.4},
               {"settings", settings(1)}}) == std::make_pair(422, std::string("ref_b")));
  CHECK(field({{"source_sha", src}, {"ref_a_sha", a}, {"ref_b_sha", a}, {"theta", -1},
               {"settings", settings(1)}}) == std::make_pair(422, std::string("theta")));
  CHECK(field({{"source_sha", src}, {"ref_a_sha", a}, {"ref_b_sha", a}, {"theta", 0.1},
               {"d", -2}, {"settings", settings(1)}}) == std::make_pair(422, std::string("d")));
  CHECK(field({{"source_sha", src}, {"ref_a_sha", a}, {"ref_b_sha", a}, {"mode", "both"},
               {"theta", 0.1}, {"settings", settings(1)}}) == std::make_pair(422, std::string("mode")));
  CHECK(field({{"source_sha", src}, {"theta", 0.0}}).first == 422);
  CHECK(field({{"source_sha", src}, {"settings", {{"width", 32}}}}) ==
        std::make_pair(422, std::string("settings.seed")));
  CHECK(field({{"source_sha", std::string(64, 'f')}, {"settings", settings(1)}}).first == 404);
  CHECK(s.client.Post("/v1/jobs/blend", "{not json", "application/json")->status == 400);
  CHECK(s.post("/v1/jobs/blend", json::array()).first == 400);
}

TEST_CASE("sweep job with progress and gallery") {
  Server s;
  const std::string src = s.upload(make_png(16, 16, 1));
  const std::string a = s.upload(make_png(16, 16, 2));
  const std::string b = s.upload(make_png(16, 16, 3));
  const json body = {{"source_sha", src}, {"ref_a_sha", a}, {"ref_b_sha", b}, {"mode", "common"},
                     {"theta_list", {0.0, 0.2, 0.4, 0.8}}, {"d_list", {0.0, 0.6, 1.0}},
                     {"settings", settings(2)}};
  auto [status, accepted] = s.post("/v1/jobs/sweep", body);
  REQUIRE(status == 202);
  const json job = s.wait_job(accepted["job_id"]);
  CHECK(job["state"] == "done");
  CHECK(job["progress"]["total"] == 12);
  CHECK(job["progress"]["completed"] == 12);
  CHECK(job["result"]["run_ids"].size() == 12);

  auto [gs, gallery] = s.get("/v1/runs");
  CHECK(gs == 200);
  REQUIRE(gallery["groups"].size() == 1);
  const json& group = gallery["groups"][0];
  CHECK(group["rows_theta"].size() == 4);
  CHECK(group["cols_d"].size() == 3);
  CHECK(group["cells"].size() == 12);
  auto [fs_, filtered] = s.get("/v1/runs?group=" + group["group_key"].get<std::string>());
  CHECK(filtered["groups"].size() == 1);
  CHECK(s.get("/v1/runs?group=none").second["groups"].empty());

  json bad = body;
  bad["theta_list"] = {0.4, 0.2};
  auto [bs, err] = s.post("/v1/jobs/sweep", bad);
  CHECK(bs == 422);
  CHECK(err["field"] == "theta_list");
}

TEST_CASE("mask dry run") {
  Server s;
  const std::string src = s.upload(make_png(16, 16, 1));
  const std::string a = s.upload(make_png(16, 16, 2));
  double last = -1;
  for (double theta : {0.0, 0.2, 0.6, 2.5}) {
    auto [status, body] = s.post("/v1/mask", {{"source_sha", src}, {"ref_a_sha", a}, {"ref_b_sha", src},
                                              {"mode", "distinct"}, {"theta", theta}});
    INFO(body.dump());
    REQUIRE(status == 200);
    CHECK(body["mask_size"] == 4 * 768);
    CHECK(body["mask_fraction"].get<double>() >= last);
    last = body["mask_fraction"];
  }
  CHECK(last == 1.0);
  CHECK(s.get("/v1/runs").second["groups"].empty());
}

TEST_CASE("CORS preflight") {
  Server s;
  auto res = s.client.Options("/v1/jobs/blend");
  REQUIRE(res);
  CHECK(res->status == 204);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
}
