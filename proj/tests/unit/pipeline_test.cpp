// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <functional>

#include "support.hpp"
#include "vcb/digest.hpp"
#include "vcb/embedding_file.hpp"
#include "vcb/encoder.hpp"
#include "vcb/error.hpp"
#include "vcb/files.hpp"
#include "vcb/pipeline.hpp"

using namespace vcb;
using vcb::testing::make_png;
using vcb::testing::TempDir;
namespace fs = std::filesystem;

namespace {

// Mock generator that fails every `period`-th call.
class FlakyGenerator final : public GeneratorBackend {
 public:
  explicit FlakyGenerator(int period) : period_(period) {}
  std::string backend_id() const override { return MockGenerator::kBackendId; }

 protected:
  std::vector<std::uint8_t> do_generate(const Embedding& e, const DepthMap* depth,
                                        const DepthDirective& directive,
                                        const GenSettings& settings) override {
    if (++n_ % period_ == 0) throw std::runtime_error("device lost");
    return inner_.generate(e, depth, directive, settings);
  }

 private:
  int period_;
  std::atomic<int> n_{0};
  MockGenerator inner_;
};

struct Fixture {
  TempDir dir;
  MockEncoder encoder;
  MockDepthEstimator depth;
  MockGenerator generator;
  RunStore store{dir / "store"};
  Pipeline pipeline{Backends{&encoder, &depth, {&generator}}, store, dir / "cache"};
  ImageRef source = make_png(32, 24, 1);
  ImageRef ref_a = make_png(32, 24, 2);
  ImageRef ref_b = make_png(32, 24, 3);

  GenSettings settings(std::uint64_t seed = 11) const {
    GenSettings s;
    s.seed = seed;
    s.width = 32;
    s.height = 32;
    return s;
  }
  BlendRequest request(BlendMode mode, double theta, double d) const {
    return BlendRequest{source, ref_a, ref_b, mode, theta, d, settings()};
  }
  Embedding blended_of(const RunRecord& r) const {
    return read_embedding(store.run_dir(r.run_id) / "blended.vcbe");
  }
  std::vector<std::uint8_t> image_of(const RunRecord& r) const {
    return read_file(store.run_dir(r.run_id) / r.output_image);
  }
};

Error error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  FAIL("expected vcb::Error");
  return Error(ErrorKind::kIo, "");
}

}  // namespace

TEST_CASE("blend run persists a complete record") {
  Fixture f;
  const RunRecord r = f.pipeline.run_blend(f.request(BlendMode::kCommon, 0.4, 0.0));
  CHECK(fs::exists(f.store.run_dir(r.run_id) / "record.json"));
  CHECK(fs::exists(f.store.run_dir(r.run_id) / "output.png"));
  CHECK(r.theta() == 0.4);
  CHECK(r.d() == 0.0);
  CHECK(r.seed() == 11);
  CHECK(r.mode() == BlendMode::kCommon);
  CHECK(r.encoder_id == MockEncoder::kEncoderId);
  CHECK(r.generator_id == MockGenerator::kBackendId);
  CHECK(r.estimator_id.empty());
  CHECK(r.mask_fraction > 0.0);
  CHECK(r.mask_fraction < 1.0);
  BlendRequest normalized = f.request(BlendMode::kCommon, 0.4, 0.0);
  normalized.settings.backend_id = MockGenerator::kBackendId;
  CHECK(r.request_digest == normalized.digest());
  CHECK(f.depth.calls() == 0);

  const auto loaded = f.store.load(r.run_id);
  REQUIRE(loaded);
  auto without_timings = [](nlohmann::json j) {
    j.erase("timings_ms");
    return j;
  };
  CHECK(without_timings(loaded->to_json()) == without_timings(r.to_json()));
  CHECK(f.store.get_image(f.ref_b.sha256()));
  CHECK(sha256_hex(f.image_of(r)) == r.output_sha256);
}

TEST_CASE("blended embedding matches the algebra on the encoded inputs") {
  Fixture f;
  MockEncoder enc;
  const Embedding s = enc.encode(f.source), a = enc.encode(f.ref_a), b = enc.encode(f.ref_b);
  const auto mask = similarity_vector(a, b, 0.3f);
  CHECK(f.blended_of(f.pipeline.run_blend(f.request(BlendMode::kCommon, 0.3, 0.0))) ==
        blend_common(s, a, b, mask));
  CHECK(f.blended_of(f.pipeline.run_blend(f.request(BlendMode::kDistinct, 0.3, 0.0))) ==
        blend_distinct(s, a, mask));
}

TEST_CASE("theta 0 reproduces the source-only baseline") {
  Fixture f;
  const RunRecord blended = f.pipeline.run_blend(f.request(BlendMode::kCommon, 0.0, 0.0));
  const RunRecord baseline = f.pipeline.run_blend(BlendRequest::baseline(f.source, f.settings()));
  CHECK(blended.mask_fraction == 0.0);
  CHECK(f.blended_of(blended) == MockEncoder().encode(f.source));
  CHECK(f.image_of(blended) == f.image_of(baseline));
  CHECK(baseline.request["ref_a"].is_null());
}

TEST_CASE("request validation happens before any backend call") {
  Fixture f;
  BlendRequest missing = f.request(BlendMode::kCommon, 0.4, 0.0);
  missing.ref_b.reset();
  Error e = error_of([&] { f.pipeline.run_blend(missing); });
  CHECK(e.kind() == ErrorKind::kParameter);
  CHECK(e.stage() == "validate");
  CHECK(e.detail().find("ref_b") == 0);

  BlendRequest distinct = missing;
  distinct.mode = BlendMode::kDistinct;
  CHECK(error_of([&] { f.pipeline.run_blend(distinct); }).detail().find("ref_b") == 0);

  CHECK(error_of([&] { f.pipeline.run_blend(f.request(BlendMode::kCommon, -0.1, 0.0)); })
            .detail()
            .find("theta") == 0);
  CHECK(error_of([&] { f.pipeline.run_blend(f.request(BlendMode::kCommon, 0.1, -1.0)); })
            .kind() == ErrorKind::kParameter);
  CHECK(f.encoder.calls() == 0);
  CHECK(f.generator.calls() == 0);
}

TEST_CASE("depth runs only when d > 0") {
  Fixture f;
  const RunRecord r = f.pipeline.run_blend(f.request(BlendMode::kCommon, 0.4, 0.6));
  CHECK(f.depth.calls() == 1);
  CHECK(r.estimator_id == MockDepthEstimator::kEstimatorId);
  const RunRecord r0 = f.pipeline.run_blend(f.request(BlendMode::kCommon, 0.4, 0.0));
  CHECK(f.depth.calls() == 1);
  CHECK_FALSE(f.image_of(r) == f.image_of(r0));
}

TEST_CASE("sweep shares encodes and depth across cells") {
  Fixture f;
  SweepRequest sweep{f.request(BlendMode::kCommon, 0, 0), {0.0, 0.2, 0.4, 0.8}, {0.0, 0.6, 1.0}};
  std::vector<std::size_t> progress;
  const SweepResult result =
      f.pipeline.run_sweep(sweep, [&](std::size_t done, std::size_t total) {
        CHECK(total == 12);
        progress.push_back(done);
      });
  CHECK(result.total == 12);
  CHECK(result.records.size() == 12);
  CHECK(result.failures.empty());
  CHECK(f.encoder.calls() == 3);
  CHECK(f.depth.calls() == 1);
  CHECK(f.generator.calls() == 12);
  CHECK(progress.size() == 12);
  CHECK(progress.back() == 12);

  for (std::size_t i = 0; i < 12; ++i) {
    const RunRecord& r = result.records[i];
    REQUIRE(r.sweep);
    CHECK(r.sweep->row == i / 3);
    CHECK(r.sweep->col == i % 3);
    CHECK(r.theta() == sweep.theta_list[i / 3]);
    CHECK(r.d() == sweep.d_list[i % 3]);
    CHECK(r.sweep->sweep_id == result.sweep_id);
  }
  for (std::size_t row = 1; row < 4; ++row) {
    CHECK(result.records[row * 3].mask_fraction >= result.records[(row - 1) * 3].mask_fraction);
  }

  // each cell matches the equivalent single blend
  const RunRecord single = f.pipeline.run_blend(f.request(BlendMode::kCommon, 0.4, 0.6));
  CHECK(f.image_of(single) == f.image_of(result.records[2 * 3 + 1]));
  CHECK(single.request_digest == result.records[2 * 3 + 1].request_digest);
}

TEST_CASE("sweep validation") {
  Fixture f;
  auto bad = [&](std::vector<double> thetas, std::vector<double> ds) {
    SweepRequest s{f.request(BlendMode::kCommon, 0, 0), thetas, ds};
    return error_of([&] { f.pipeline.run_sweep(s); }).detail();
  };
  CHECK(bad({}, {0.0}).find("theta_list") == 0);
  CHECK(bad({0.2, 0.1}, {0.0}).find("theta_list") == 0);
  CHECK(bad({0.2, 0.2}, {0.0}).find("theta_list") == 0);
  CHECK(bad({0.1}, {-1.0}).find("d_list") == 0);
  CHECK(f.encoder.calls() == 0);
}

TEST_CASE("sweep records per-cell failures and keeps going") {
  TempDir dir;
  MockEncoder enc;
  MockDepthEstimator depth;
  FlakyGenerator flaky(4);
  RunStore store(dir / "store");
  Pipeline pipeline(Backends{&enc, &depth, {&flaky}}, store, dir / "cache");
  GenSettings s;
  s.seed = 1;
  s.width = s.height = 16;
  SweepRequest sweep{
      BlendRequest{make_png(8, 8, 1), make_png(8, 8, 2), make_png(8, 8, 3), BlendMode::kCommon, 0, 0, s},
      {0.1, 0.2},
      {0.0, 0.5, 1.0, 1.5}};
  const SweepResult result = pipeline.run_sweep(sweep);
  CHECK(result.total == 8);
  CHECK(result.records.size() == 6);
  REQUIRE(result.failures.size() == 2);
  CHECK(result.failures[0].error.find("device lost") != std::string::npos);
  CHECK(store.load_all().size() == 6);
}

TEST_CASE("sweeps spread across several generator instances") {
  TempDir dir;
  MockEncoder enc;
  MockDepthEstimator depth;
  MockGenerator g1, g2;
  RunStore store(dir / "store");
  Pipeline pipeline(Backends{&enc, &depth, {&g1, &g2}}, store, dir / "cache");
  GenSettings s;
  s.seed = 5;
  s.width = s.height = 16;
  SweepRequest sweep{
      BlendRequest{make_png(8, 8, 1), make_png(8, 8, 2), make_png(8, 8, 3), BlendMode::kDistinct, 0, 0, s},
      {0.0, 0.2, 0.4, 0.8},
      {0.0, 0.6, 1.0}};
  const SweepResult result = pipeline.run_sweep(sweep);
  CHECK(result.records.size() == 12);
  CHECK(g1.calls() + g2.calls() == 12);
  for (std::size_t i = 0; i < 12; ++i) CHECK(result.records[i].sweep->row == i / 3);
}

TEST_CASE("rerun reproduces a stored run") {
  Fixture f;
  const RunRecord r = f.pipeline.run_blend(f.request(BlendMode::kDistinct, 0.2, 1.0));
  const RunRecord again = f.pipeline.rerun(r);
  CHECK(again.run_id != r.run_id);
  CHECK(again.request_digest == r.request_digest);
  CHECK(again.output_sha256 == r.output_sha256);
}

TEST_CASE("gallery groups runs by request minus theta, d and seed") {
  Fixture f;
  SweepRequest sweep{f.request(BlendMode::kCommon, 0, 0), {0.2, 0.4}, {0.0, 1.0}};
  f.pipeline.run_sweep(sweep);
  BlendRequest extra = f.request(BlendMode::kCommon, 0.8, 0.0);
  extra.settings.seed = 99;
  f.pipeline.run_blend(extra);
  f.pipeline.run_blend(f.request(BlendMode::kDistinct, 0.2, 0.0));

  const auto groups = write_gallery_index(f.store);
  REQUIRE(groups.size() == 2);
  const GalleryGroup& common = groups[0];
  CHECK(common.thetas == std::vector<double>{0.2, 0.4, 0.8});
  CHECK(common.ds == std::vector<double>{0.0, 1.0});
  CHECK(common.cells.size() == 5);
  for (std::size_t i = 1; i < common.cells.size(); ++i) {
    CHECK(std::tie(common.cells[i - 1].row, common.cells[i - 1].col) <
          std::tie(common.cells[i].row, common.cells[i].col));
  }
  CHECK(common.shared_request.contains("mode"));
  CHECK_FALSE(common.shared_request.contains("theta"));
  CHECK(fs::exists(f.store.index_path()));

  fs::remove(f.store.run_dir(common.cells[0].record.run_id) / "output.png");
  CHECK(gallery_index(f.store)[0].cells[0].image_missing);
}

TEST_CASE("preview computes the mask without persisting") {
  Fixture f;
  const BlendPreview p = f.pipeline.preview(f.request(BlendMode::kCommon, 0.4, 0.0));
  CHECK(p.mask.size() == kPromptShape.size());
  CHECK(f.store.load_all().empty());
  CHECK(f.generator.calls() == 0);
}
