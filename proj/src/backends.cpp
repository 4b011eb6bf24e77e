// SPDX-License-Identifier: Apache-2.0

#include "vcb/backends.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstring>

#include "vcb/embedding_file.hpp"
#include "vcb/error.hpp"
#include "vcb/files.hpp"

extern char** environ;

namespace vcb {

namespace fs = std::filesystem;
using json = nlohmann::json;

BackendConfig BackendConfig::from_json(const json& j) {
  BackendConfig c;
  c.kind = j.value("backend", c.kind);
  if (j.contains("worker_command")) {
    c.worker_command = j.at("worker_command").get<std::vector<std::string>>();
  }
  c.encoder_id = j.value("encoder_id", "");
  c.estimator_id = j.value("estimator_id", "");
  c.generator_id = j.value("generator_id", "");
  if (j.contains("weights")) c.weights = j.at("weights");
  c.device = j.value("device", c.device);
  c.generator_instances = j.value("generator_instances", 1);
  return c;
}

BackendConfig BackendConfig::load(const fs::path& path) {
  try {
    return from_json(json::parse(read_text_file(path)));
  } catch (const json::exception& ex) {
    fail(ErrorKind::kParameter, "config " + path.string() + ": " + ex.what());
  }
}

void BackendConfig::validate() const {
  if (kind != "mock" && kind != "real") {
    fail(ErrorKind::kParameter, "backend must be 'mock' or 'real', got '" + kind + "'");
  }
  if (generator_instances < 1) fail(ErrorKind::kParameter, "generator_instances must be >= 1");
  if (kind == "real") {
    if (worker_command.empty()) {
      fail(ErrorKind::kParameter, "real backend needs worker_command in the config");
    }
    if (encoder_id.empty() || estimator_id.empty() || generator_id.empty()) {
      fail(ErrorKind::kParameter,
           "real backend needs pinned encoder_id, estimator_id and generator_id");
    }
  }
}

WorkerProcess::WorkerProcess(const BackendConfig& config)
    : command_(config.worker_command), weights_(config.weights), device_(config.device) {}

fs::path WorkerProcess::make_workdir() const {
  const fs::path dir = fs::temp_directory_path() / ("vcb-worker-" + make_uuid());
  fs::create_directories(dir);
  return dir;
}

json WorkerProcess::call(json request, const fs::path& workdir) const {
  request["weights"] = weights_;
  request["device"] = device_;
  request["workdir"] = workdir.string();
  const fs::path request_path = workdir / "request.json";
  const fs::path response_path = workdir / "response.json";
  write_file_atomic(request_path, request.dump(2));

  std::vector<std::string> args = command_;
  args.push_back(request_path.string());
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, argv[0], nullptr, nullptr, argv.data(), environ);
  if (rc != 0) {
    fail(ErrorKind::kBackend, "cannot start worker '" + command_.front() + "': " + std::strerror(rc));
  }
  int status = 0;
  while (waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) fail(ErrorKind::kBackend, "lost worker process");
  }
  json response;
  std::error_code ec;
  if (fs::exists(response_path, ec)) {
    response = json::parse(read_text_file(response_path), nullptr, false);
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    std::string detail = response.is_object() ? response.value("error", "") : "";
    fail(ErrorKind::kBackend, "worker exited with status " +
                                  std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1) +
                                  (detail.empty() ? "" : ": " + detail));
  }
  if (!response.is_object() || !response.value("ok", false)) {
    const std::string detail =
        response.is_object() ? response.value("error", "no detail") : "missing response.json";
    fail(ErrorKind::kBackend, "worker reported failure: " + detail);
  }
  return response;
}

namespace {

// Removes the worker's scratch directory on scope exit.
struct ScratchDir {
  fs::path path;
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

ProcessEncoder::ProcessEncoder(const BackendConfig& config)
    : worker_(config), id_(config.encoder_id) {}

Embedding ProcessEncoder::do_encode(const ImageRef& image) {
  decode_image(image);
  ScratchDir dir{worker_.make_workdir()};
  const fs::path input = dir.path / ("input" + image.file_extension());
  write_file_atomic(input, image.bytes());
  worker_.call({{"op", "encode"},
                {"image", input.string()},
                {"encoder_id", id_},
                {"output", (dir.path / "embedding.vcbe").string()}},
               dir.path);
  const EmbeddingRecord record = read_embedding_record(dir.path / "embedding.vcbe");
  return Embedding(record.embedding.shape(),
                   std::vector<float>(record.embedding.values().begin(),
                                      record.embedding.values().end()),
                   id_);
}

ProcessDepthEstimator::ProcessDepthEstimator(const BackendConfig& config)
    : worker_(config), id_(config.estimator_id) {}

DepthMap ProcessDepthEstimator::do_estimate(const ImageRef& image) {
  const RasterImage raster = decode_image(image);
  ScratchDir dir{worker_.make_workdir()};
  const fs::path input = dir.path / ("input" + image.file_extension());
  write_file_atomic(input, image.bytes());
  worker_.call({{"op", "depth"},
                {"image", input.string()},
                {"estimator_id", id_},
                {"output", (dir.path / "depth.vcbe").string()}},
               dir.path);
  const EmbeddingRecord record = read_embedding_record(dir.path / "depth.vcbe");
  const Shape shape = record.embedding.shape();
  if (shape.rows != static_cast<std::size_t>(raster.height) ||
      shape.cols != static_cast<std::size_t>(raster.width)) {
    fail(ErrorKind::kBackend, "depth worker returned " + to_string(shape) + " for a " +
                                  std::to_string(raster.width) + "x" +
                                  std::to_string(raster.height) + " image");
  }
  return DepthMap{raster.height, raster.width,
                  std::vector<float>(record.embedding.values().begin(),
                                     record.embedding.values().end()),
                  image.sha256(), id_};
}

ProcessGenerator::ProcessGenerator(const BackendConfig& config)
    : worker_(config), id_(config.generator_id) {}

std::vector<std::uint8_t> ProcessGenerator::do_generate(const Embedding& embedding,
                                                        const DepthMap* depth,
                                                        const DepthDirective& directive,
                                                        const GenSettings& settings) {
  ScratchDir dir{worker_.make_workdir()};
  const fs::path emb_path = dir.path / "embedding.vcbe";
  write_embedding(embedding, emb_path);
  json depth_path = nullptr;
  if (directive.enabled && depth != nullptr) {
    const fs::path p = dir.path / "depth.vcbe";
    write_embedding(Embedding({static_cast<std::size_t>(depth->height),
                               static_cast<std::size_t>(depth->width)},
                              depth->values, depth->estimator_id),
                    p, depth->source_sha256);
    depth_path = p.string();
  }
  const fs::path output = dir.path / "output.png";
  worker_.call({{"op", "generate"},
                {"embedding", emb_path.string()},
                {"depth", depth_path},
                {"depth_scale", directive.enabled ? directive.scale : 0.0f},
                {"prompt", kEmptyPrompt},
                {"settings",
                 {{"seed", settings.seed},
                  {"steps", settings.steps},
                  {"guidance", settings.guidance},
                  {"width", settings.width},
                  {"height", settings.height}}},
                {"output", output.string()}},
               dir.path);
  return read_file(output);
}

Backends BackendSet::view() const {
  Backends b{encoder.get(), depth.get(), {}};
  for (const auto& g : generators) b.generators.push_back(g.get());
  return b;
}

json BackendSet::health() const {
  return {{"backend", kind},
          {"ready", encoder != nullptr && depth != nullptr && !generators.empty()},
          {"weights_required", kind == "real"},
          {"encoder", encoder ? encoder->encoder_id() : ""},
          {"depth_estimator", depth ? depth->estimator_id() : ""},
          {"generator", generators.empty() ? "" : generators.front()->backend_id()},
          {"generator_instances", generators.size()}};
}

BackendSet make_backends(const BackendConfig& config) {
  config.validate();
  BackendSet set;
  set.kind = config.kind;
  if (config.kind == "mock") {
    set.encoder = std::make_unique<MockEncoder>();
    set.depth = std::make_unique<MockDepthEstimator>();
    for (int i = 0; i < config.generator_instances; ++i) {
      set.generators.push_back(std::make_unique<MockGenerator>());
    }
  } else {
    set.encoder = std::make_unique<ProcessEncoder>(config);
    set.depth = std::make_unique<ProcessDepthEstimator>(config);
    for (int i = 0; i < config.generator_instances; ++i) {
      set.generators.push_back(std::make_unique<ProcessGenerator>(config));
    }
  }
  return set;
}

}  // namespace vcb
