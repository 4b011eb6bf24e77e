// SPDX-License-Identifier: Apache-2.0
//
// Backend selection. "mock" needs no weights. "real" delegates to an external
// worker process that hosts the pretrained models; the worker is invoked once
// per call as `<worker_command...> <request.json>` and exchanges tensors as
// VCBE files, images as PNG and a response.json status object.

#pragma once

#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "vcb/encoder.hpp"
#include "vcb/generation.hpp"
#include "vcb/pipeline.hpp"

namespace vcb {

struct BackendConfig {
  std::string kind = "mock";  // "mock" | "real"
  std::vector<std::string> worker_command;
  std::string encoder_id;
  std::string estimator_id;
  std::string generator_id;
  nlohmann::json weights = nlohmann::json::object();  // pinned identifiers, passed to the worker
  std::string device = "cpu";
  int generator_instances = 1;

  static BackendConfig from_json(const nlohmann::json& j);
  static BackendConfig load(const std::filesystem::path& path);
  void validate() const;
};

/// Runs one worker request in a fresh temporary directory. `request` gets
/// "weights", "device" and "workdir" added. Throws a backend error when the
/// process fails or reports {"ok": false}.
class WorkerProcess {
 public:
  explicit WorkerProcess(const BackendConfig& config);

  std::filesystem::path make_workdir() const;
  nlohmann::json call(nlohmann::json request, const std::filesystem::path& workdir) const;

 private:
  std::vector<std::string> command_;
  nlohmann::json weights_;
  std::string device_;
};

class ProcessEncoder final : public EncoderBackend {
 public:
  explicit ProcessEncoder(const BackendConfig& config);
  std::string encoder_id() const override { return id_; }

 protected:
  Embedding do_encode(const ImageRef& image) override;

 private:
  WorkerProcess worker_;
  std::string id_;
};

class ProcessDepthEstimator final : public DepthEstimator {
 public:
  explicit ProcessDepthEstimator(const BackendConfig& config);
  std::string estimator_id() const override { return id_; }

 protected:
  DepthMap do_estimate(const ImageRef& image) override;

 private:
  WorkerProcess worker_;
  std::string id_;
};

class ProcessGenerator final : public GeneratorBackend {
 public:
  explicit ProcessGenerator(const BackendConfig& config);
  std::string backend_id() const override { return id_; }

 protected:
  std::vector<std::uint8_t> do_generate(const Embedding& embedding, const DepthMap* depth,
                                        const DepthDirective& directive,
                                        const GenSettings& settings) override;

 private:
  WorkerProcess worker_;
  std::string id_;
};

struct BackendSet {
  std::string kind;
  std::unique_ptr<EncoderBackend> encoder;
  std::unique_ptr<DepthEstimator> depth;
  std::vector<std::unique_ptr<GeneratorBackend>> generators;

  Backends view() const;
  // {"backend": kind, "ready": bool, "encoder": id, ...}
  nlohmann::json health() const;
};

BackendSet make_backends(const BackendConfig& config);

}  // namespace vcb
