// SPDX-License-Identifier: Apache-2.0

#include "vcb/run_store.hpp"

#include <algorithm>
#include <cmath>

#include "vcb/digest.hpp"
#include "vcb/embedding_file.hpp"
#include "vcb/error.hpp"
#include "vcb/files.hpp"

namespace vcb {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json image_json(const std::optional<ImageRef>& image) {
  if (!image) return nullptr;
  return {{"sha256", image->sha256()}, {"media_type", image->media_type()}};
}

void require_non_negative(double value, const char* name) {
  if (!std::isfinite(value) || value < 0.0) {
    throw Error(ErrorKind::kParameter, std::string(name) +
                                           " must be finite and non-negative, got " +
                                           std::to_string(value));
  }
}

}  // namespace

BlendRequest BlendRequest::baseline(ImageRef source, GenSettings settings, double d) {
  return BlendRequest{std::move(source), std::nullopt, std::nullopt,
                      BlendMode::kCommon, 0.0, d, std::move(settings)};
}

void BlendRequest::validate() const {
  require_non_negative(theta, "theta");
  require_non_negative(d, "d");
  if (is_baseline()) {
    if (mode != BlendMode::kCommon) {
      fail(ErrorKind::kParameter, "ref_a and ref_b are required for distinct mode");
    }
    if (theta != 0.0) {
      fail(ErrorKind::kParameter,
           "ref_a and ref_b are required unless theta is 0 (source-only baseline)");
    }
    return;
  }
  if (!ref_a) fail(ErrorKind::kParameter, "ref_a is required when ref_b is given");
  if (!ref_b) {
    fail(ErrorKind::kParameter,
         "ref_b is required for " + std::string(to_string(mode)) + " mode");
  }
}

json BlendRequest::canonical_json() const {
  return {
      {"version", 1},
      {"source", image_json(source)},
      {"ref_a", image_json(ref_a)},
      {"ref_b", image_json(ref_b)},
      {"mode", std::string(to_string(mode))},
      {"theta", theta},
      {"d", d},
      {"settings",
       {{"seed", settings.seed},
        {"steps", settings.steps},
        {"guidance", settings.guidance},
        {"width", settings.width},
        {"height", settings.height},
        {"backend_id", settings.backend_id}}},
  };
}

std::string digest_canonical(const json& canonical) {
  return sha256_hex(canonical.dump());
}

json canonical_request_without_grid(const json& canonical) {
  json out = canonical;
  out.erase("theta");
  out.erase("d");
  if (out.contains("settings")) out["settings"].erase("seed");
  return out;
}

std::string BlendRequest::digest() const { return digest_canonical(canonical_json()); }

std::string BlendRequest::group_key() const {
  return digest_canonical(canonical_request_without_grid(canonical_json()));
}

json RunRecord::to_json() const {
  json j = {
      {"run_id", run_id},
      {"request_digest", request_digest},
      {"group_key", group_key},
      {"request", request},
      {"mask_fraction", mask_fraction},
      {"output_image", output_image},
      {"output_sha256", output_sha256},
      {"timings_ms",
       {{"encode", timings.encode_ms},
        {"depth", timings.depth_ms},
        {"blend", timings.blend_ms},
        {"generate", timings.generate_ms},
        {"persist", timings.persist_ms},
        {"total", timings.total_ms}}},
      {"backends",
       {{"encoder", encoder_id}, {"depth_estimator", estimator_id}, {"generator", generator_id}}},
      {"created_at", created_at},
      {"sweep", nullptr},
  };
  if (sweep) {
    j["sweep"] = {{"sweep_id", sweep->sweep_id},
                  {"row", sweep->row},
                  {"col", sweep->col},
                  {"theta_list", sweep->theta_list},
                  {"d_list", sweep->d_list}};
  }
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.request_digest = j.at("request_digest").get<std::string>();
  r.group_key = j.at("group_key").get<std::string>();
  r.request = j.at("request");
  r.mask_fraction = j.at("mask_fraction").get<double>();
  r.output_image = j.at("output_image").get<std::string>();
  r.output_sha256 = j.at("output_sha256").get<std::string>();
  const auto& t = j.at("timings_ms");
  r.timings = {t.at("encode").get<double>(),   t.at("depth").get<double>(),
               t.at("blend").get<double>(),    t.at("generate").get<double>(),
               t.at("persist").get<double>(),  t.at("total").get<double>()};
  const auto& b = j.at("backends");
  r.encoder_id = b.at("encoder").get<std::string>();
  r.estimator_id = b.at("depth_estimator").get<std::string>();
  r.generator_id = b.at("generator").get<std::string>();
  r.created_at = j.at("created_at").get<std::string>();
  if (!j.at("sweep").is_null()) {
    const auto& s = j.at("sweep");
    r.sweep = SweepCell{s.at("sweep_id").get<std::string>(), s.at("row").get<std::size_t>(),
                        s.at("col").get<std::size_t>(),
                        s.at("theta_list").get<std::vector<double>>(),
                        s.at("d_list").get<std::vector<double>>()};
  }
  return r;
}

RunStore::RunStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "runs");
  fs::create_directories(root_ / "images");
}

fs::path RunStore::run_dir(const std::string& run_id) const {
  return root_ / "runs" / run_id;
}

void RunStore::persist(const RunRecord& record, const std::vector<std::uint8_t>& png,
                       const Embedding& blended) {
  std::lock_guard lock(write_mu_);
  const fs::path final_dir = run_dir(record.run_id);
  if (fs::exists(final_dir)) {
    fail(ErrorKind::kIo, "run " + record.run_id + " already exists");
  }
  const fs::path staging = root_ / "runs" / ("." + record.run_id + ".staging");
  std::error_code ec;
  fs::remove_all(staging, ec);
  try {
    fs::create_directories(staging);
    write_file_atomic(staging / record.output_image, png);
    write_embedding(blended, staging / "blended.vcbe");
    write_file_atomic(staging / "record.json", record.to_json().dump(2));
    fs::rename(staging, final_dir);
  } catch (const fs::filesystem_error& ex) {
    fs::remove_all(staging, ec);
    fail(ErrorKind::kIo, std::string("cannot persist run: ") + ex.what());
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
}

std::optional<RunRecord> RunStore::load(const std::string& run_id) const {
  if (run_id.empty() || run_id.front() == '.' ||
      run_id.find('/') != std::string::npos) {
    return std::nullopt;
  }
  const fs::path path = run_dir(run_id) / "record.json";
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  return RunRecord::from_json(json::parse(read_text_file(path)));
}

std::vector<RunRecord> RunStore::load_all() const {
  std::vector<RunRecord> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(root_ / "runs", ec)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.empty() || name.front() == '.') continue;
    try {
      if (auto record = load(name)) out.push_back(std::move(*record));
    } catch (const std::exception&) {
      // skip unreadable records
    }
  }
  std::sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.created_at, a.run_id) < std::tie(b.created_at, b.run_id);
  });
  return out;
}

bool RunStore::put_image(const ImageRef& image) {
  const fs::path path = root_ / "images" / (image.sha256() + image.file_extension());
  std::lock_guard lock(write_mu_);
  std::error_code ec;
  if (fs::exists(path, ec)) return false;
  write_file_atomic(path, image.bytes());
  return true;
}

std::optional<ImageRef> RunStore::get_image(const std::string& sha256) const {
  if (!is_sha256_hex(sha256)) return std::nullopt;
  for (const char* ext : {".png", ".jpg"}) {
    const fs::path path = root_ / "images" / (sha256 + ext);
    std::error_code ec;
    if (fs::exists(path, ec)) return ImageRef::from_bytes(read_file(path));
  }
  return std::nullopt;
}

BlendRequest RunStore::request_from_canonical(const json& c) const {
  auto image = [this](const json& j, const char* field) -> std::optional<ImageRef> {
    if (j.is_null()) return std::nullopt;
    const auto sha = j.at("sha256").get<std::string>();
    auto found = get_image(sha);
    if (!found) fail(ErrorKind::kNotFound, std::string(field) + " image " + sha + " not in store");
    return found;
  };
  BlendRequest req{*image(c.at("source"), "source"), image(c.at("ref_a"), "ref_a"),
                   image(c.at("ref_b"), "ref_b"), parse_blend_mode(c.at("mode").get<std::string>()),
                   c.at("theta").get<double>(), c.at("d").get<double>(), GenSettings{}};
  const auto& s = c.at("settings");
  req.settings.seed = s.at("seed").get<std::uint64_t>();
  req.settings.steps = s.at("steps").get<int>();
  req.settings.guidance = s.at("guidance").get<double>();
  req.settings.width = s.at("width").get<int>();
  req.settings.height = s.at("height").get<int>();
  req.settings.backend_id = s.at("backend_id").get<std::string>();
  return req;
}

void RunStore::write_text_atomic(const fs::path& path, const std::string& text) {
  std::lock_guard lock(write_mu_);
  write_file_atomic(path, text);
}

}  // namespace vcb
