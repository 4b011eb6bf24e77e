// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "vcb/embedding.hpp"
#include "vcb/generation.hpp"
#include "vcb/image.hpp"

namespace vcb {

/// Everything needed to reproduce one generation. Reference images are
/// absent only for the source-only baseline (common mode, theta == 0).
struct BlendRequest {
  ImageRef source;
  std::optional<ImageRef> ref_a;
  std::optional<ImageRef> ref_b;
  BlendMode mode = BlendMode::kCommon;
  double theta = 0.0;
  double d = 0.0;
  GenSettings settings;

  static BlendRequest baseline(ImageRef source, GenSettings settings, double d = 0.0);

  bool is_baseline() const noexcept { return !ref_a && !ref_b; }
  // Parameter errors name the offending field.
  void validate() const;

  // Sorted keys, no whitespace, images replaced by {sha256, media_type}.
  nlohmann::json canonical_json() const;
  std::string digest() const;
  // Digest of the request with theta, d and seed removed; runs sharing it
  // belong to one gallery group.
  std::string group_key() const;
};

nlohmann::json canonical_request_without_grid(const nlohmann::json& canonical);
std::string digest_canonical(const nlohmann::json& canonical);

struct SweepCell {
  std::string sweep_id;
  std::size_t row = 0;
  std::size_t col = 0;
  std::vector<double> theta_list;
  std::vector<double> d_list;
};

struct RunTimings {
  double encode_ms = 0;
  double depth_ms = 0;
  double blend_ms = 0;
  double generate_ms = 0;
  double persist_ms = 0;
  double total_ms = 0;
};

struct RunRecord {
  std::string run_id;
  std::string request_digest;
  std::string group_key;
  nlohmann::json request;  // canonical form
  double mask_fraction = 0.0;
  std::string output_image = "output.png";
  std::string output_sha256;
  RunTimings timings;
  std::string encoder_id;
  std::string estimator_id;  // empty when depth was not used
  std::string generator_id;
  std::string created_at;
  std::optional<SweepCell> sweep;

  double theta() const { return request.at("theta").get<double>(); }
  double d() const { return request.at("d").get<double>(); }
  std::uint64_t seed() const { return request.at("settings").at("seed").get<std::uint64_t>(); }
  BlendMode mode() const { return parse_blend_mode(request.at("mode").get<std::string>()); }

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

/// On-disk store:
///   <root>/runs/<run_id>/record.json, output.png, blended.vcbe
///   <root>/images/<sha256>.<png|jpg>
///   <root>/index.json
/// Runs are staged in a hidden directory and renamed into place, so a run
/// directory is either complete or absent. Writes go through one mutex.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path run_dir(const std::string& run_id) const;
  std::filesystem::path index_path() const { return root_ / "index.json"; }

  void persist(const RunRecord& record, const std::vector<std::uint8_t>& png,
               const Embedding& blended);

  std::optional<RunRecord> load(const std::string& run_id) const;
  // Sorted by created_at, then run_id. Unreadable records are skipped.
  std::vector<RunRecord> load_all() const;

  // Returns false when identical bytes were already stored.
  bool put_image(const ImageRef& image);
  std::optional<ImageRef> get_image(const std::string& sha256) const;

  // Rebuilds a request from its canonical JSON using stored images.
  BlendRequest request_from_canonical(const nlohmann::json& canonical) const;

  void write_text_atomic(const std::filesystem::path& path, const std::string& text);

 private:
  std::filesystem::path root_;
  mutable std::mutex write_mu_;
};

}  // namespace vcb
