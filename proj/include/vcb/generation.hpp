// SPDX-License-Identifier: Apache-2.0
//
// Decoding embeddings into images, optionally constrained by a depth map of
// strength d. d == 0 short-circuits the depth branch entirely: the backend is
// handed no depth map at all, so the output cannot depend on it.

#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "vcb/embedding.hpp"
#include "vcb/image.hpp"

namespace vcb {

/// Relative depth, row-major [height, width]; smaller is nearer.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::string source_sha256;
  std::string estimator_id;

  void validate() const;
  friend bool operator==(const DepthMap&, const DepthMap&) = default;
};

class DepthEstimator {
 public:
  virtual ~DepthEstimator() = default;
  virtual std::string estimator_id() const = 0;

  DepthMap estimate(const ImageRef& image);
  std::size_t calls() const noexcept { return calls_.load(); }

 protected:
  virtual DepthMap do_estimate(const ImageRef& image) = 0;

 private:
  std::mutex mu_;
  std::atomic<std::size_t> calls_{0};
};

/// Smooth synthetic depth field seeded by the image digest D. With
/// h = SHA-256(D || "vcb-mock-depth") read as little-endian uint32 words u0..u3:
///
///   fx = 1 + u0 % 3, fy = 1 + u1 % 3, p = 2*pi*u2/2^32, q = 2*pi*u3/2^32
///   depth(y, x) = 0.5 + 0.25 sin(2*pi*fx*(x + 0.5)/W + p)
///                     + 0.25 cos(2*pi*fy*(y + 0.5)/H + q)
class MockDepthEstimator final : public DepthEstimator {
 public:
  static constexpr const char* kEstimatorId = "mock-depth-v1";
  std::string estimator_id() const override { return kEstimatorId; }

 protected:
  DepthMap do_estimate(const ImageRef& image) override;
};

DepthMap estimate_depth(DepthEstimator& estimator, const ImageRef& image);

struct DepthDirective {
  bool enabled = false;
  float scale = 0.0f;
  friend bool operator==(const DepthDirective&, const DepthDirective&) = default;
};

inline constexpr double kDefaultMaxDepthScale = 2.0;

// d == 0 -> disabled; d > 0 -> enabled with scale min(d, max_scale).
DepthDirective depth_strength_to_scale(double d,
                                       double max_scale = kDefaultMaxDepthScale);

struct GenSettings {
  std::uint64_t seed = 0;
  int steps = 30;
  double guidance = 7.5;
  int width = 512;
  int height = 512;
  std::string backend_id;

  // steps >= 1, guidance finite and >= 0, dimensions positive multiples of
  // `granularity`.
  void validate(int granularity) const;
  friend bool operator==(const GenSettings&, const GenSettings&) = default;
};

/// Generators never receive user text; real backends feed this constant to
/// the text-conditioning pathway.
inline constexpr const char* kEmptyPrompt = "";

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;

  virtual std::string backend_id() const = 0;
  virtual int latent_granularity() const { return 8; }
  virtual double max_depth_scale() const { return kDefaultMaxDepthScale; }
  virtual Shape input_shape() const { return kPromptShape; }

  // `depth` is null whenever directive.enabled is false. Returns PNG bytes.
  std::vector<std::uint8_t> generate(const Embedding& embedding,
                                     const DepthMap* depth,
                                     const DepthDirective& directive,
                                     const GenSettings& settings);
  std::size_t calls() const noexcept { return calls_.load(); }

 protected:
  virtual std::vector<std::uint8_t> do_generate(const Embedding& embedding,
                                                const DepthMap* depth,
                                                const DepthDirective& directive,
                                                const GenSettings& settings) = 0;

 private:
  std::mutex mu_;
  std::atomic<std::size_t> calls_{0};
};

// Digest of everything a generation depends on: embedding bytes and encoder
// tag, the depth directive, depth values when enabled, and the settings.
std::string generation_input_digest(const Embedding& embedding,
                                    const DepthMap* depth,
                                    const DepthDirective& directive,
                                    const GenSettings& settings);

/// Renders 16x16 pixel blocks of colour noise from a splitmix64 stream
/// seeded with the first eight bytes of generation_input_digest().
class MockGenerator final : public GeneratorBackend {
 public:
  static constexpr const char* kBackendId = "mock-noise-v1";
  std::string backend_id() const override { return kBackendId; }

 protected:
  std::vector<std::uint8_t> do_generate(const Embedding& embedding,
                                        const DepthMap* depth,
                                        const DepthDirective& directive,
                                        const GenSettings& settings) override;
};

// Validates inputs, applies the d -> directive mapping (dropping the depth
// map when disabled), checks the returned image has the requested size and
// stamps a "vcb" JSON text chunk with provenance (input digest, seed, backend
// id, depth scale).
std::vector<std::uint8_t> generate(GeneratorBackend& backend, const Embedding& e,
                                   const DepthMap* depth, double d,
                                   const GenSettings& settings);

}  // namespace vcb
