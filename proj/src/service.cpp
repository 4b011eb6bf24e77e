// SPDX-License-Identifier: Apache-2.0

#include "vcb/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "vcb/error.hpp"
#include "vcb/files.hpp"

namespace vcb {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::kPending: return "pending";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "unknown";
}

json Job::to_json() const {
  json j = {{"job_id", job_id},
            {"kind", kind},
            {"state", std::string(to_string(state))},
            {"progress", {{"completed", completed}, {"total", total}}},
            {"payload", payload},
            {"created_at", created_at},
            {"updated_at", updated_at}};
  if (state == JobState::kFailed) {
    j["result"] = {{"error", error}};
  } else {
    j["result"] = {{"run_ids", run_ids}};
  }
  if (!failures.empty()) j["failures"] = failures;
  return j;
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message,
                const std::string& field = {}) {
  json body = {{"error", message}};
  if (!field.empty()) body["field"] = field;
  send_json(res, status, body);
}

[[noreturn]] void unprocessable(const std::string& field, const std::string& message) {
  throw HttpError{422, message, field};
}

double number_field(const json& body, const char* field, std::optional<double> fallback) {
  if (!body.contains(field)) {
    if (fallback) return *fallback;
    unprocessable(field, std::string(field) + " is required");
  }
  if (!body.at(field).is_number()) unprocessable(field, std::string(field) + " must be a number");
  return body.at(field).get<double>();
}

std::vector<double> number_list(const json& body, const char* field) {
  if (!body.contains(field) || !body.at(field).is_array()) {
    unprocessable(field, std::string(field) + " must be an array of numbers");
  }
  std::vector<double> out;
  for (const auto& v : body.at(field)) {
    if (!v.is_number()) unprocessable(field, std::string(field) + " must be an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

// Maps the field named at the start of a validation message back to the
// request body key.
std::string field_of(const std::string& message) {
  for (const char* f : {"theta_list", "d_list", "theta", "ref_a", "ref_b", "mode", "steps",
                        "guidance", "width", "d "}) {
    if (message.rfind(f, 0) == 0 || message.find(std::string(f) + " ") != std::string::npos) {
      std::string name = f;
      if (name == "d ") name = "d";
      return name;
    }
  }
  return {};
}

template <class F>
auto validating(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& ex) {
    if (ex.is_validation()) unprocessable(field_of(ex.detail()), ex.detail());
    throw;
  }
}

}  // namespace

Service::Service(BackendSet& backends, ServiceOptions options)
    : backends_(backends),
      options_(std::move(options)),
      store_(options_.store_root),
      pipeline_(backends.view(), store_, options_.cache_dir),
      server_(std::make_unique<httplib::Server>()) {
  register_routes();
  worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

bool Service::listen(const std::string& host, int port) { return server_->listen(host, port); }

int Service::start_background(const std::string& host) {
  const int port = server_->bind_to_any_port(host);
  if (port <= 0) fail(ErrorKind::kIo, "cannot bind HTTP server");
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
}

std::string Service::submit_blend(BlendRequest request, json payload) {
  const std::string id = make_uuid();
  Job job;
  job.job_id = id;
  job.kind = "blend";
  job.payload = std::move(payload);
  job.total = 1;
  job.created_at = job.updated_at = utc_timestamp();
  {
    std::lock_guard lock(mu_);
    jobs_.emplace(id, std::move(job));
    queue_.emplace_back(id, std::move(request));
  }
  cv_.notify_one();
  return id;
}

std::string Service::submit_sweep(SweepRequest request, json payload) {
  const std::string id = make_uuid();
  Job job;
  job.job_id = id;
  job.kind = "sweep";
  job.payload = std::move(payload);
  job.total = request.cell_count();
  job.created_at = job.updated_at = utc_timestamp();
  {
    std::lock_guard lock(mu_);
    jobs_.emplace(id, std::move(job));
    queue_.emplace_back(id, std::move(request));
  }
  cv_.notify_one();
  return id;
}

std::optional<Job> Service::job(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

void Service::wait_idle() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
}

void Service::update(const std::string& id, const std::function<void(Job&)>& fn) {
  std::lock_guard lock(mu_);
  Job& job = jobs_.at(id);
  fn(job);
  job.updated_at = utc_timestamp();
}

void Service::worker_loop() {
  for (;;) {
    std::optional<std::pair<std::string, Task>> item;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      item.emplace(std::move(queue_.front()));
      queue_.pop_front();
      busy_ = true;
    }
    run_job(item->first, item->second);
    {
      std::lock_guard lock(mu_);
      busy_ = false;
    }
    idle_cv_.notify_all();
  }
}

void Service::run_job(const std::string& id, Task& task) {
  update(id, [](Job& j) { j.state = JobState::kRunning; });
  try {
    if (auto* blend = std::get_if<BlendRequest>(&task)) {
      const RunRecord record = pipeline_.run_blend(*blend);
      write_gallery_index(store_);
      update(id, [&](Job& j) {
        j.run_ids.push_back(record.run_id);
        j.completed = 1;
        j.state = JobState::kDone;
      });
    } else {
      auto& sweep = std::get<SweepRequest>(task);
      const SweepResult result = pipeline_.run_sweep(sweep, [&](std::size_t done, std::size_t) {
        update(id, [&](Job& j) { j.completed = std::max(j.completed, done); });
      });
      write_gallery_index(store_);
      update(id, [&](Job& j) {
        for (const auto& r : result.records) j.run_ids.push_back(r.run_id);
        for (const auto& f : result.failures) {
          j.failures.push_back(
              {{"row", f.row}, {"col", f.col}, {"theta", f.theta}, {"d", f.d}, {"error", f.error}});
        }
        j.completed = result.total;
        if (result.records.empty()) {
          j.state = JobState::kFailed;
          j.error = "every sweep cell failed";
        } else {
          j.state = JobState::kDone;
        }
      });
    }
  } catch (const std::exception& ex) {
    spdlog::warn("job {} failed: {}", id, ex.what());
    update(id, [&](Job& j) {
      j.state = JobState::kFailed;
      j.error = ex.what();
    });
  }
}

ImageRef Service::resolve_image(const json& body, const char* field) const {
  auto image = resolve_optional_image(body, field);
  if (!image) unprocessable(field, std::string(field) + " is required");
  return *image;
}

std::optional<ImageRef> Service::resolve_optional_image(const json& body, const char* field) const {
  if (!body.contains(field) || body.at(field).is_null()) return std::nullopt;
  if (!body.at(field).is_string()) unprocessable(field, std::string(field) + " must be a string");
  const std::string sha = body.at(field).get<std::string>();
  auto image = store_.get_image(sha);
  if (!image) throw HttpError{404, "unknown image digest " + sha, field};
  return image;
}

GenSettings Service::parse_settings(const json& body) const {
  if (!body.contains("settings") || !body.at("settings").is_object()) {
    unprocessable("settings", "settings object with an explicit seed is required");
  }
  const json& s = body.at("settings");
  GenSettings out;
  if (!s.contains("seed") || !s.at("seed").is_number_unsigned()) {
    unprocessable("settings.seed", "settings.seed must be a non-negative integer");
  }
  out.seed = s.at("seed").get<std::uint64_t>();
  auto integer = [&](const char* key, int fallback) {
    if (!s.contains(key)) return fallback;
    if (!s.at(key).is_number_integer()) {
      unprocessable(std::string("settings.") + key, std::string("settings.") + key + " must be an integer");
    }
    return s.at(key).get<int>();
  };
  out.steps = integer("steps", out.steps);
  out.width = integer("width", out.width);
  out.height = integer("height", out.height);
  out.guidance = number_field(s, "guidance", out.guidance);
  validating([&] { out.validate(backends_.generators.front()->latent_granularity()); });
  return out;
}

BlendRequest Service::parse_blend(const json& body) const {
  if (!body.is_object()) throw HttpError{400, "request body must be a JSON object", ""};
  BlendRequest req{resolve_image(body, "source_sha"), resolve_optional_image(body, "ref_a_sha"),
                   resolve_optional_image(body, "ref_b_sha"), BlendMode::kCommon, 0.0, 0.0,
                   GenSettings{}};
  if (body.contains("mode")) {
    if (!body.at("mode").is_string()) unprocessable("mode", "mode must be a string");
    req.mode = validating([&] { return parse_blend_mode(body.at("mode").get<std::string>()); });
  }
  req.theta = number_field(body, "theta", req.is_baseline() ? std::optional(0.0) : std::nullopt);
  req.d = number_field(body, "d", 0.0);
  req.settings = parse_settings(body);
  validating([&] { req.validate(); });
  return req;
}

SweepRequest Service::parse_sweep(const json& body) const {
  if (!body.is_object()) throw HttpError{400, "request body must be a JSON object", ""};
  SweepRequest sweep{BlendRequest{resolve_image(body, "source_sha"),
                                  resolve_optional_image(body, "ref_a_sha"),
                                  resolve_optional_image(body, "ref_b_sha"), BlendMode::kCommon,
                                  0.0, 0.0, GenSettings{}},
                     {},
                     {}};
  if (body.contains("mode")) {
    if (!body.at("mode").is_string()) unprocessable("mode", "mode must be a string");
    sweep.base.mode =
        validating([&] { return parse_blend_mode(body.at("mode").get<std::string>()); });
  }
  sweep.base.settings = parse_settings(body);
  sweep.theta_list = number_list(body, "theta_list");
  sweep.d_list = number_list(body, "d_list");
  validating([&] { sweep.validate(); });
  return sweep;
}

void Service::register_routes() {
  auto& svr = *server_;
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  svr.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
  });

  svr.Get("/v1/healthz", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, backends_.health());
  });

  svr.Post("/v1/images", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || req.files.empty()) {
      return send_error(res, 400, "expected a multipart upload with one image file", "file");
    }
    auto it = req.files.find("file");
    if (it == req.files.end()) it = req.files.begin();
    try {
      const ImageRef image = ImageRef::from_bytes(
          std::vector<std::uint8_t>(it->second.content.begin(), it->second.content.end()));
      decode_image(image);
      const bool created = store_.put_image(image);
      send_json(res, created ? 201 : 200,
                {{"sha256", image.sha256()}, {"media_type", image.media_type()}, {"created", created}});
    } catch (const Error& ex) {
      send_error(res, 400, ex.what(), "file");
    }
  });

  svr.Get(R"(/v1/images/([0-9a-f]{64}))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto image = store_.get_image(req.matches[1]);
    if (!image) return send_error(res, 404, "unknown image");
    res.set_content(std::string(image->bytes().begin(), image->bytes().end()),
                    image->media_type() == "png" ? "image/png" : "image/jpeg");
  });

  auto with_body = [](const httplib::Request& req, httplib::Response& res, auto&& fn) {
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded()) return send_error(res, 400, "request body is not valid JSON");
    try {
      fn(body);
    } catch (const HttpError& err) {
      send_error(res, err.status, err.message, err.field);
    } catch (const Error& ex) {
      send_error(res, ex.is_validation() ? 422 : 500, ex.what());
    }
  };

  svr.Post("/v1/jobs/blend", [this, with_body](const httplib::Request& req, httplib::Response& res) {
    with_body(req, res, [&](const json& body) {
      BlendRequest request = parse_blend(body);
      send_json(res, 202, {{"job_id", submit_blend(std::move(request), body)}});
    });
  });

  svr.Post("/v1/jobs/sweep", [this, with_body](const httplib::Request& req, httplib::Response& res) {
    with_body(req, res, [&](const json& body) {
      SweepRequest request = parse_sweep(body);
      send_json(res, 202, {{"job_id", submit_sweep(std::move(request), body)}});
    });
  });

  // Dry run for live feedback: encode + mask only, nothing persisted.
  svr.Post("/v1/mask", [this, with_body](const httplib::Request& req, httplib::Response& res) {
    with_body(req, res, [&](const json& body) {
      json probe = body;
      if (!probe.contains("settings")) probe["settings"] = {{"seed", 0u}};
      const BlendRequest request = parse_blend(probe);
      const BlendPreview preview = pipeline_.preview(request);
      send_json(res, 200,
                {{"theta", request.theta},
                 {"mode", std::string(to_string(request.mode))},
                 {"mask_fraction", mask_fraction(preview.mask)},
                 {"mask_count", preview.mask.count()},
                 {"mask_size", preview.mask.size()}});
    });
  });

  svr.Get("/v1/jobs/:id", [this](const httplib::Request& req, httplib::Response& res) {
    const auto job = this->job(req.path_params.at("id"));
    if (!job) return send_error(res, 404, "unknown job");
    send_json(res, 200, job->to_json());
  });

  svr.Get("/v1/runs", [this](const httplib::Request& req, httplib::Response& res) {
    json listing = gallery_to_json(gallery_index(store_));
    if (req.has_param("group")) {
      const std::string group = req.get_param_value("group");
      json filtered = json::array();
      for (const auto& g : listing["groups"]) {
        if (g["group_key"] == group) filtered.push_back(g);
      }
      listing["groups"] = std::move(filtered);
    }
    send_json(res, 200, listing);
  });

  svr.Get("/v1/runs/:run_id", [this](const httplib::Request& req, httplib::Response& res) {
    const auto record = store_.load(req.path_params.at("run_id"));
    if (!record) return send_error(res, 404, "unknown run");
    send_json(res, 200, record->to_json());
  });

  svr.Get("/v1/runs/:run_id/image", [this](const httplib::Request& req, httplib::Response& res) {
    const auto record = store_.load(req.path_params.at("run_id"));
    if (!record) return send_error(res, 404, "unknown run");
    const fs::path path = store_.run_dir(record->run_id) / record->output_image;
    std::error_code ec;
    if (!fs::exists(path, ec)) return send_error(res, 404, "run image missing");
    const auto bytes = read_file(path);
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  });
}

}  // namespace vcb
