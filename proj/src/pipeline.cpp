// SPDX-License-Identifier: Apache-2.0

#include "vcb/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cfloat>
#include <chrono>
#include <cmath>
#include <map>
#include <thread>

#include "vcb/digest.hpp"
#include "vcb/error.hpp"
#include "vcb/files.hpp"

namespace vcb {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <class F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& ex) {
    throw ex.with_stage(stage);
  } catch (const std::exception& ex) {
    throw Error(ErrorKind::kBackend, ex.what(), stage);
  }
}

void require_ascending(const std::vector<double>& values, const char* name) {
  if (values.empty()) fail(ErrorKind::kParameter, std::string(name) + " must not be empty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || values[i] < 0.0) {
      fail(ErrorKind::kParameter,
           std::string(name) + " values must be finite and non-negative");
    }
    if (i > 0 && !(values[i] > values[i - 1])) {
      fail(ErrorKind::kParameter, std::string(name) + " must be strictly ascending");
    }
  }
}

float theta_as_float(double theta) {
  return static_cast<float>(std::min(theta, static_cast<double>(FLT_MAX)));
}

}  // namespace

void SweepRequest::validate() const {
  require_ascending(theta_list, "theta_list");
  require_ascending(d_list, "d_list");
  for (double theta : theta_list) {
    BlendRequest probe = base;
    probe.theta = theta;
    probe.d = d_list.front();
    probe.validate();
  }
}

Pipeline::Pipeline(Backends backends, RunStore& store, fs::path cache_dir)
    : backends_(std::move(backends)), store_(store), cache_dir_(std::move(cache_dir)) {
  if (backends_.encoder == nullptr || backends_.depth == nullptr ||
      backends_.generators.empty() ||
      std::find(backends_.generators.begin(), backends_.generators.end(), nullptr) !=
          backends_.generators.end()) {
    fail(ErrorKind::kParameter, "pipeline needs an encoder, a depth estimator and a generator");
  }
  const std::string id = backends_.generators.front()->backend_id();
  for (const auto* g : backends_.generators) {
    if (g->backend_id() != id) {
      fail(ErrorKind::kParameter, "all generator instances must share one backend id");
    }
  }
}

std::vector<std::string> Pipeline::warnings() const {
  std::lock_guard lock(warn_mu_);
  return warnings_;
}

BlendRequest Pipeline::normalized(const BlendRequest& request) const {
  BlendRequest out = request;
  if (out.settings.backend_id.empty()) {
    out.settings.backend_id = backends_.generators.front()->backend_id();
  }
  return out;
}

Pipeline::Encoded Pipeline::encode_inputs(const BlendRequest& request, RunTimings& timings) {
  const auto start = Clock::now();
  std::vector<std::string> warnings;
  auto get = [&](const ImageRef& image) {
    return cached_encode(*backends_.encoder, image, cache_dir_, &warnings);
  };
  Embedding source = get(request.source);
  Encoded out{source, request.ref_a ? get(*request.ref_a) : source,
              request.ref_b ? get(*request.ref_b) : source};
  timings.encode_ms = ms_since(start);
  if (!warnings.empty()) {
    std::lock_guard lock(warn_mu_);
    warnings_.insert(warnings_.end(), warnings.begin(), warnings.end());
  }
  return out;
}

SimilarityMask Pipeline::compute_mask(const Encoded& encoded, double theta) {
  return similarity_vector(encoded.ref_a, encoded.ref_b, theta_as_float(theta));
}

Embedding Pipeline::compute_blend(const BlendRequest& request, const Encoded& encoded,
                                  const SimilarityMask& mask) {
  if (request.mode == BlendMode::kCommon) {
    return blend_common(encoded.source, encoded.ref_a, encoded.ref_b, mask);
  }
  return blend_distinct(encoded.source, encoded.ref_a, mask);
}

BlendPreview Pipeline::preview(const BlendRequest& request) {
  const BlendRequest req = in_stage("validate", [&] {
    BlendRequest r = normalized(request);
    r.validate();
    return r;
  });
  RunTimings timings;
  const Encoded encoded = in_stage("encode", [&] { return encode_inputs(req, timings); });
  SimilarityMask mask = in_stage("mask", [&] { return compute_mask(encoded, req.theta); });
  Embedding blended = in_stage("blend", [&] { return compute_blend(req, encoded, mask); });
  return {std::move(blended), std::move(mask)};
}

void Pipeline::store_inputs(const BlendRequest& request) {
  store_.put_image(request.source);
  if (request.ref_a) store_.put_image(*request.ref_a);
  if (request.ref_b) store_.put_image(*request.ref_b);
}

RunRecord Pipeline::render_and_persist(const BlendRequest& request, const Embedding& blended,
                                       double fraction, const DepthMap* depth,
                                       GeneratorBackend& generator, RunTimings timings,
                                       std::optional<SweepCell> cell) {
  auto start = Clock::now();
  const std::vector<std::uint8_t> png = in_stage(
      "generate", [&] { return generate(generator, blended, depth, request.d, request.settings); });
  timings.generate_ms = ms_since(start);

  RunRecord record;
  record.run_id = make_uuid();
  record.request = request.canonical_json();
  record.request_digest = digest_canonical(record.request);
  record.group_key = digest_canonical(canonical_request_without_grid(record.request));
  record.mask_fraction = fraction;
  record.output_sha256 = sha256_hex(png);
  record.encoder_id = backends_.encoder->encoder_id();
  record.estimator_id = depth != nullptr ? depth->estimator_id : std::string();
  record.generator_id = generator.backend_id();
  record.created_at = utc_timestamp();
  record.sweep = std::move(cell);

  start = Clock::now();
  in_stage("persist", [&] {
    store_inputs(request);
    record.timings = timings;
    record.timings.total_ms = timings.encode_ms + timings.depth_ms + timings.blend_ms +
                              timings.generate_ms;
    store_.persist(record, png, blended);
  });
  record.timings.persist_ms = ms_since(start);
  return record;
}

RunRecord Pipeline::run_blend(const BlendRequest& request) {
  const BlendRequest req = in_stage("validate", [&] {
    BlendRequest r = normalized(request);
    r.validate();
    r.settings.validate(backends_.generators.front()->latent_granularity());
    return r;
  });
  RunTimings timings;
  const Encoded encoded = in_stage("encode", [&] { return encode_inputs(req, timings); });

  auto start = Clock::now();
  const SimilarityMask mask = in_stage("mask", [&] { return compute_mask(encoded, req.theta); });
  const Embedding blended = in_stage("blend", [&] { return compute_blend(req, encoded, mask); });
  timings.blend_ms = ms_since(start);

  std::optional<DepthMap> depth;
  if (req.d > 0.0) {
    start = Clock::now();
    depth = in_stage("depth", [&] { return estimate_depth(*backends_.depth, req.source); });
    timings.depth_ms = ms_since(start);
  }
  return render_and_persist(req, blended, mask_fraction(mask), depth ? &*depth : nullptr,
                            *backends_.generators.front(), timings, std::nullopt);
}

SweepResult Pipeline::run_sweep(const SweepRequest& request, const ProgressFn& progress) {
  const SweepRequest sweep = in_stage("validate", [&] {
    SweepRequest s = request;
    s.base = normalized(s.base);
    s.validate();
    s.base.settings.validate(backends_.generators.front()->latent_granularity());
    return s;
  });
  const std::size_t rows = sweep.theta_list.size();
  const std::size_t cols = sweep.d_list.size();

  SweepResult result;
  result.sweep_id = make_uuid();
  result.total = rows * cols;

  RunTimings shared;
  const Encoded encoded = in_stage("encode", [&] { return encode_inputs(sweep.base, shared); });

  std::optional<DepthMap> depth;
  std::string depth_error;
  if (sweep.d_list.back() > 0.0) {
    const auto start = Clock::now();
    try {
      depth = in_stage("depth", [&] { return estimate_depth(*backends_.depth, sweep.base.source); });
    } catch (const Error& ex) {
      depth_error = ex.what();
    }
    shared.depth_ms = ms_since(start);
  }

  struct Row {
    std::optional<Embedding> blended;
    double fraction = 0.0;
    double blend_ms = 0.0;
    std::string error;
  };
  std::vector<Row> row_data(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto start = Clock::now();
    try {
      BlendRequest cell = sweep.base;
      cell.theta = sweep.theta_list[r];
      const SimilarityMask mask = in_stage("mask", [&] { return compute_mask(encoded, cell.theta); });
      row_data[r].blended = in_stage("blend", [&] { return compute_blend(cell, encoded, mask); });
      row_data[r].fraction = mask_fraction(mask);
    } catch (const Error& ex) {
      row_data[r].error = ex.what();
    }
    row_data[r].blend_ms = ms_since(start);
  }

  std::vector<std::optional<RunRecord>> slots(result.total);
  std::vector<std::optional<CellFailure>> failures(result.total);
  std::atomic<std::size_t> next{0};
  std::mutex progress_mu;
  std::size_t completed = 0;

  auto worker = [&](GeneratorBackend& generator) {
    for (std::size_t i = next++; i < result.total; i = next++) {
      const std::size_t r = i / cols;
      const std::size_t c = i % cols;
      BlendRequest cell = sweep.base;
      cell.theta = sweep.theta_list[r];
      cell.d = sweep.d_list[c];
      try {
        if (!row_data[r].blended) throw Error(ErrorKind::kBackend, row_data[r].error);
        if (cell.d > 0.0 && !depth) throw Error(ErrorKind::kBackend, depth_error);
        RunTimings timings = shared;
        timings.blend_ms = row_data[r].blend_ms;
        slots[i] = render_and_persist(
            cell, *row_data[r].blended, row_data[r].fraction,
            cell.d > 0.0 ? &*depth : nullptr, generator, timings,
            SweepCell{result.sweep_id, r, c, sweep.theta_list, sweep.d_list});
      } catch (const std::exception& ex) {
        failures[i] = CellFailure{r, c, cell.theta, cell.d, ex.what()};
      }
      std::lock_guard lock(progress_mu);
      ++completed;
      if (progress) progress(completed, result.total);
    }
  };

  if (backends_.generators.size() == 1) {
    worker(*backends_.generators.front());
  } else {
    std::vector<std::thread> threads;
    for (auto* g : backends_.generators) threads.emplace_back(worker, std::ref(*g));
    for (auto& t : threads) t.join();
  }

  for (std::size_t i = 0; i < result.total; ++i) {
    if (slots[i]) result.records.push_back(std::move(*slots[i]));
    if (failures[i]) result.failures.push_back(std::move(*failures[i]));
  }
  return result;
}

RunRecord Pipeline::rerun(const RunRecord& record) {
  const BlendRequest req =
      in_stage("validate", [&] { return store_.request_from_canonical(record.request); });
  return run_blend(req);
}

std::vector<GalleryGroup> gallery_index(const RunStore& store) {
  std::map<std::string, GalleryGroup> by_key;
  std::vector<std::string> order;  // first-seen order over created_at-sorted records
  for (RunRecord& record : store.load_all()) {
    auto [it, inserted] = by_key.try_emplace(record.group_key);
    GalleryGroup& group = it->second;
    if (inserted) {
      order.push_back(record.group_key);
      group.group_key = record.group_key;
      group.shared_request = canonical_request_without_grid(record.request);
    }
    GalleryCell cell;
    std::error_code ec;
    cell.image_missing =
        !fs::exists(store.run_dir(record.run_id) / record.output_image, ec);
    cell.record = std::move(record);
    group.cells.push_back(std::move(cell));
  }

  std::vector<GalleryGroup> out;
  for (const auto& key : order) {
    GalleryGroup group = std::move(by_key.at(key));
    for (const auto& cell : group.cells) {
      group.thetas.push_back(cell.record.theta());
      group.ds.push_back(cell.record.d());
    }
    for (auto* axis : {&group.thetas, &group.ds}) {
      std::sort(axis->begin(), axis->end());
      axis->erase(std::unique(axis->begin(), axis->end()), axis->end());
    }
    for (auto& cell : group.cells) {
      cell.row = static_cast<std::size_t>(
          std::lower_bound(group.thetas.begin(), group.thetas.end(), cell.record.theta()) -
          group.thetas.begin());
      cell.col = static_cast<std::size_t>(
          std::lower_bound(group.ds.begin(), group.ds.end(), cell.record.d()) -
          group.ds.begin());
    }
    std::stable_sort(group.cells.begin(), group.cells.end(),
                     [](const GalleryCell& a, const GalleryCell& b) {
                       return std::tie(a.row, a.col) < std::tie(b.row, b.col);
                     });
    out.push_back(std::move(group));
  }
  return out;
}

json gallery_to_json(const std::vector<GalleryGroup>& groups) {
  json out = json::array();
  for (const auto& group : groups) {
    json cells = json::array();
    for (const auto& cell : group.cells) {
      cells.push_back({{"run_id", cell.record.run_id},
                       {"row", cell.row},
                       {"col", cell.col},
                       {"theta", cell.record.theta()},
                       {"d", cell.record.d()},
                       {"seed", cell.record.seed()},
                       {"mask_fraction", cell.record.mask_fraction},
                       {"request_digest", cell.record.request_digest},
                       {"created_at", cell.record.created_at},
                       {"image_missing", cell.image_missing}});
    }
    out.push_back({{"group_key", group.group_key},
                   {"request", group.shared_request},
                   {"rows_theta", group.thetas},
                   {"cols_d", group.ds},
                   {"cells", std::move(cells)}});
  }
  return {{"version", 1}, {"groups", std::move(out)}};
}

std::vector<GalleryGroup> write_gallery_index(RunStore& store) {
  auto groups = gallery_index(store);
  store.write_text_atomic(store.index_path(), gallery_to_json(groups).dump(2));
  return groups;
}

}  // namespace vcb
