// SPDX-License-Identifier: Apache-2.0
//
// End-to-end blend: encode (cached) -> similarity mask -> blend -> generate,
// plus theta x d sweeps over one image triple.

#pragma once

#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "vcb/embedding.hpp"
#include "vcb/encoder.hpp"
#include "vcb/generation.hpp"
#include "vcb/run_store.hpp"

namespace vcb {

struct Backends {
  EncoderBackend* encoder = nullptr;
  DepthEstimator* depth = nullptr;
  // One entry per generator instance; sweeps spread cells across them.
  std::vector<GeneratorBackend*> generators;
};

struct SweepRequest {
  BlendRequest base;  // theta and d are ignored
  std::vector<double> theta_list;
  std::vector<double> d_list;

  void validate() const;
  std::size_t cell_count() const noexcept { return theta_list.size() * d_list.size(); }
};

struct CellFailure {
  std::size_t row = 0;
  std::size_t col = 0;
  double theta = 0.0;
  double d = 0.0;
  std::string error;
};

struct SweepResult {
  std::string sweep_id;
  std::size_t total = 0;
  std::vector<RunRecord> records;  // row-major (theta outer, d inner), failures skipped
  std::vector<CellFailure> failures;
};

// (completed cells, total cells); invoked after every cell.
using ProgressFn = std::function<void(std::size_t, std::size_t)>;

struct BlendPreview {
  Embedding blended;
  SimilarityMask mask;
};

class Pipeline {
 public:
  Pipeline(Backends backends, RunStore& store, std::filesystem::path cache_dir);

  // Steps 1-3 only: no generation, nothing persisted.
  BlendPreview preview(const BlendRequest& request);

  // Errors carry the failing stage: validate, encode, mask, blend, depth,
  // generate or persist. Nothing is persisted on failure.
  RunRecord run_blend(const BlendRequest& request);

  // Encodes each image and estimates depth at most once for the whole grid.
  SweepResult run_sweep(const SweepRequest& request, const ProgressFn& progress = {});

  // Re-executes the stored request of an existing record.
  RunRecord rerun(const RunRecord& record);

  RunStore& store() noexcept { return store_; }
  const Backends& backends() const noexcept { return backends_; }
  std::vector<std::string> warnings() const;

 private:
  struct Encoded {
    Embedding source;
    Embedding ref_a;
    Embedding ref_b;
  };

  Encoded encode_inputs(const BlendRequest& request, RunTimings& timings);
  SimilarityMask compute_mask(const Encoded& encoded, double theta);
  Embedding compute_blend(const BlendRequest& request, const Encoded& encoded,
                          const SimilarityMask& mask);
  BlendRequest normalized(const BlendRequest& request) const;
  void store_inputs(const BlendRequest& request);
  RunRecord render_and_persist(const BlendRequest& request, const Embedding& blended,
                               double fraction, const DepthMap* depth,
                               GeneratorBackend& generator, RunTimings timings,
                               std::optional<SweepCell> cell);

  Backends backends_;
  RunStore& store_;
  std::filesystem::path cache_dir_;
  mutable std::mutex warn_mu_;
  std::vector<std::string> warnings_;
};

struct GalleryCell {
  RunRecord record;
  std::size_t row = 0;  // index into GalleryGroup::thetas
  std::size_t col = 0;  // index into GalleryGroup::ds
  bool image_missing = false;
};

/// Runs sharing a request digest apart from theta, d and seed. Rows are
/// thetas and columns are ds, both ascending; cells are row-major.
struct GalleryGroup {
  std::string group_key;
  nlohmann::json shared_request;
  std::vector<double> thetas;
  std::vector<double> ds;
  std::vector<GalleryCell> cells;
};

std::vector<GalleryGroup> gallery_index(const RunStore& store);
nlohmann::json gallery_to_json(const std::vector<GalleryGroup>& groups);
// Rebuilds the listing and writes <store>/index.json.
std::vector<GalleryGroup> write_gallery_index(RunStore& store);

}  // namespace vcb
