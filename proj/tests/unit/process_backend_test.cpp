// SPDX-License-Identifier: Apache-2.0
//
// Exercises the external-worker backends against tests/fake_worker.py.

#include <doctest.h>

#include <filesystem>

#include "support.hpp"
#include "vcb/backends.hpp"
#include "vcb/error.hpp"
#include "vcb/files.hpp"
#include "vcb/pipeline.hpp"

using namespace vcb;
using vcb::testing::make_png;
using vcb::testing::TempDir;

namespace {

BackendConfig fake_config(nlohmann::json weights = nlohmann::json::object()) {
  BackendConfig c;
  c.kind = "real";
  c.worker_command = {VCB_PYTHON, VCB_FAKE_WORKER};
  c.encoder_id = "fake-enc";
  c.estimator_id = "fake-depth";
  c.generator_id = "fake-gen";
  c.weights = std::move(weights);
  return c;
}

bool have_python() { return std::string(VCB_PYTHON).size() > 0; }

}  // namespace

TEST_CASE("config validation") {
  BackendConfig c = fake_config();
  CHECK_NOTHROW(c.validate());
  c.worker_command.clear();
  CHECK_THROWS_AS(c.validate(), Error);
  c = fake_config();
  c.generator_id.clear();
  CHECK_THROWS_AS(c.validate(), Error);
  c = fake_config();
  c.kind = "gpu";
  CHECK_THROWS_AS(c.validate(), Error);

  TempDir dir;
  write_file_atomic(dir / "c.json", std::string(R"({"backend": "mock", "generator_instances": 2})"));
  const BackendConfig loaded = BackendConfig::load(dir / "c.json");
  CHECK(loaded.kind == "mock");
  CHECK(make_backends(loaded).generators.size() == 2);
  write_file_atomic(dir / "bad.json", std::string("{"));
  CHECK_THROWS_AS(BackendConfig::load(dir / "bad.json"), Error);
}

TEST_CASE("worker backends run a full blend") {
  if (!have_python()) return;
  TempDir dir;
  BackendSet set = make_backends(fake_config());
  CHECK(set.health()["weights_required"] == true);
  CHECK(set.health()["encoder"] == "fake-enc");
  RunStore store(dir / "store");
  Pipeline pipeline(set.view(), store, dir / "cache");
  GenSettings s;
  s.seed = 3;
  s.width = s.height = 16;
  const RunRecord r = pipeline.run_blend(BlendRequest{make_png(12, 10, 1), make_png(12, 10, 2),
                                                      make_png(12, 10, 3), BlendMode::kCommon, 0.4, 0.6, s});
  CHECK(r.encoder_id == "fake-enc");
  CHECK(r.estimator_id == "fake-depth");
  CHECK(r.generator_id == "fake-gen");
  CHECK(std::filesystem::exists(store.run_dir(r.run_id) / "output.png"));
  CHECK(set.encoder->calls() == 3);
  CHECK(set.depth->calls() == 1);
}

TEST_CASE("worker failures become backend errors tagged with the stage") {
  if (!have_python()) return;
  TempDir dir;
  BackendSet set = make_backends(fake_config({{"fail_op", "generate"}}));
  RunStore store(dir / "store");
  Pipeline pipeline(set.view(), store, dir / "cache");
  GenSettings s;
  s.seed = 3;
  s.width = s.height = 16;
  try {
    pipeline.run_blend(BlendRequest::baseline(make_png(8, 8, 1), s));
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kBackend);
    CHECK(e.stage() == "generate");
    CHECK(std::string(e.what()).find("injected failure") != std::string::npos);
  }
  CHECK(store.load_all().empty());

  BackendConfig missing = fake_config();
  missing.worker_command = {"/nonexistent/worker"};
  BackendSet broken = make_backends(missing);
  CHECK_THROWS_AS(broken.encoder->encode(make_png(8, 8, 1)), Error);
}
