// SPDX-License-Identifier: Apache-2.0
//
// HTTP job service (/v1). Blend and sweep submissions return immediately with
// a job id; a single worker thread executes jobs FIFO and clients poll
// GET /v1/jobs/{id}. A job reaches "done" only after its run records have
// been persisted.

#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "vcb/backends.hpp"
#include "vcb/pipeline.hpp"

namespace httplib {
class Server;
}

namespace vcb {

enum class JobState { kPending, kRunning, kDone, kFailed };
std::string_view to_string(JobState s);

struct Job {
  std::string job_id;
  std::string kind;  // "blend" | "sweep"
  nlohmann::json payload;
  JobState state = JobState::kPending;
  std::size_t completed = 0;
  std::size_t total = 0;
  std::vector<std::string> run_ids;
  std::string error;
  nlohmann::json failures = nlohmann::json::array();
  std::string created_at;
  std::string updated_at;

  nlohmann::json to_json() const;
};

/// Thrown while decoding request bodies; carries the HTTP status.
struct HttpError {
  int status;
  std::string message;
  std::string field;
};

struct ServiceOptions {
  std::filesystem::path store_root;
  std::filesystem::path cache_dir;
};

class Service {
 public:
  Service(BackendSet& backends, ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Blocking; returns when stop() is called.
  bool listen(const std::string& host, int port);
  // For tests: bind to an ephemeral port and serve on a background thread.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

  std::string submit_blend(BlendRequest request, nlohmann::json payload);
  std::string submit_sweep(SweepRequest request, nlohmann::json payload);
  std::optional<Job> job(const std::string& id) const;
  // Blocks until the queue is empty and no job is running.
  void wait_idle();

  // Request-body decoding, exposed for tests. Throw HttpError.
  BlendRequest parse_blend(const nlohmann::json& body) const;
  SweepRequest parse_sweep(const nlohmann::json& body) const;

 private:
  using Task = std::variant<BlendRequest, SweepRequest>;

  void register_routes();
  void worker_loop();
  void run_job(const std::string& id, Task& task);
  void update(const std::string& id, const std::function<void(Job&)>& fn);
  ImageRef resolve_image(const nlohmann::json& body, const char* field) const;
  std::optional<ImageRef> resolve_optional_image(const nlohmann::json& body,
                                                 const char* field) const;
  GenSettings parse_settings(const nlohmann::json& body) const;

  BackendSet& backends_;
  ServiceOptions options_;
  RunStore store_;
  Pipeline pipeline_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::map<std::string, Job> jobs_;
  std::deque<std::pair<std::string, Task>> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace vcb
