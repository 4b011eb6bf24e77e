// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "vcb/digest.hpp"
#include "vcb/embedding.hpp"
#include "vcb/image.hpp"

namespace vcb {

/// Maps image bytes to an image-prompt embedding. Implementations must be
/// deterministic in (bytes, encoder_id) and own any preprocessing, which is
/// why preprocessing parameters are expected to be folded into encoder_id.
///
/// encode() serializes calls on one instance; model contexts are not assumed
/// to be reentrant.
class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;

  virtual std::string encoder_id() const = 0;
  virtual Shape output_shape() const { return kPromptShape; }

  Embedding encode(const ImageRef& image);
  std::size_t calls() const noexcept { return calls_.load(); }

 protected:
  virtual Embedding do_encode(const ImageRef& image) = 0;

 private:
  std::mutex mu_;
  std::atomic<std::size_t> calls_{0};
};

/// Test encoder that needs no weights. The image must decode; its SHA-256
/// digest D then seeds a counter-mode expansion:
///
///   block_j = SHA-256(D || "vcb-mock-encoder" || le32(j)),  j = 0, 1, ...
///
/// Each block yields eight little-endian uint32 words u, mapped to
/// u / (2^32 - 1) * 2 - 1 (computed in double, stored as float), filling the
/// [4, 768] tensor in row-major order.
class MockEncoder final : public EncoderBackend {
 public:
  static constexpr const char* kEncoderId = "mock-sha256ctr-v1";

  std::string encoder_id() const override { return kEncoderId; }

  // The value rule applied to a raw digest; exposed for tests.
  static std::vector<float> expand(const Sha256& digest, std::size_t count);

 protected:
  Embedding do_encode(const ImageRef& image) override;
};

// Validating wrapper: checks the output shape and encoder tag and reports
// non-vcb failures as backend errors.
Embedding encode(EncoderBackend& backend, const ImageRef& image);

// Cache layout: <cache_dir>/<encoder_id>/<sha256>.vcbe. A corrupt entry is
// discarded, re-encoded and rewritten; a warning is appended to `warnings`
// (when given) and logged.
Embedding cached_encode(EncoderBackend& backend, const ImageRef& image,
                        const std::filesystem::path& cache_dir,
                        std::vector<std::string>* warnings = nullptr);

std::filesystem::path cache_entry_path(const std::filesystem::path& cache_dir,
                                       const std::string& encoder_id,
                                       const std::string& image_sha256);

}  // namespace vcb
