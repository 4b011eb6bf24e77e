// SPDX-License-Identifier: Apache-2.0

#include "vcb/generation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>

#include "vcb/digest.hpp"
#include "vcb/error.hpp"

namespace vcb {

void DepthMap::validate() const {
  if (height <= 0 || width <= 0) {
    fail(ErrorKind::kParameter, "depth map must have positive extent");
  }
  if (values.size() != static_cast<std::size_t>(height) * width) {
    fail(ErrorKind::kParameter, "depth map value count does not match its extent");
  }
  if (std::any_of(values.begin(), values.end(), [](float v) { return !std::isfinite(v); })) {
    fail(ErrorKind::kParameter, "depth map contains non-finite values");
  }
}

DepthMap DepthEstimator::estimate(const ImageRef& image) {
  std::lock_guard lock(mu_);
  ++calls_;
  return do_estimate(image);
}

namespace {

std::uint32_t le32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
         (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

}  // namespace

DepthMap MockDepthEstimator::do_estimate(const ImageRef& image) {
  const RasterImage raster = decode_image(image);
  const Sha256 h =
      Sha256Hasher().update(sha256(image.bytes())).update("vcb-mock-depth").finish();
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const double fx = 1 + le32(&h[0]) % 3;
  const double fy = 1 + le32(&h[4]) % 3;
  const double p = kTwoPi * le32(&h[8]) / 4294967296.0;
  const double q = kTwoPi * le32(&h[12]) / 4294967296.0;

  DepthMap map;
  map.height = raster.height;
  map.width = raster.width;
  map.source_sha256 = image.sha256();
  map.estimator_id = kEstimatorId;
  map.values.resize(static_cast<std::size_t>(raster.height) * raster.width);
  for (int y = 0; y < raster.height; ++y) {
    const double cy = std::cos(kTwoPi * fy * (y + 0.5) / raster.height + q);
    for (int x = 0; x < raster.width; ++x) {
      const double sx = std::sin(kTwoPi * fx * (x + 0.5) / raster.width + p);
      map.values[static_cast<std::size_t>(y) * raster.width + x] =
          static_cast<float>(0.5 + 0.25 * sx + 0.25 * cy);
    }
  }
  return map;
}

DepthMap estimate_depth(DepthEstimator& estimator, const ImageRef& image) {
  const std::string id = estimator.estimator_id();
  try {
    DepthMap map = estimator.estimate(image);
    map.validate();
    return map;
  } catch (const Error& ex) {
    if (ex.kind() == ErrorKind::kInput) throw;
    if (ex.kind() == ErrorKind::kBackend) throw;
    throw Error(ErrorKind::kBackend, "depth estimator '" + id + "' failed: " + ex.detail());
  } catch (const std::exception& ex) {
    fail(ErrorKind::kBackend, "depth estimator '" + id + "' failed: " + ex.what());
  }
}

DepthDirective depth_strength_to_scale(double d, double max_scale) {
  if (!std::isfinite(d) || d < 0.0) {
    fail(ErrorKind::kParameter,
         "depth strength d must be finite and non-negative, got " + std::to_string(d));
  }
  if (d == 0.0) return {};
  return {true, static_cast<float>(std::min(d, max_scale))};
}

void GenSettings::validate(int granularity) const {
  if (steps < 1) fail(ErrorKind::kParameter, "steps must be >= 1");
  if (!std::isfinite(guidance) || guidance < 0.0) {
    fail(ErrorKind::kParameter, "guidance must be finite and non-negative");
  }
  if (width <= 0 || height <= 0 || width % granularity != 0 ||
      height % granularity != 0) {
    fail(ErrorKind::kParameter, "width and height must be positive multiples of " +
                                    std::to_string(granularity) + ", got " +
                                    std::to_string(width) + "x" + std::to_string(height));
  }
}

std::vector<std::uint8_t> GeneratorBackend::generate(const Embedding& embedding,
                                                     const DepthMap* depth,
                                                     const DepthDirective& directive,
                                                     const GenSettings& settings) {
  std::lock_guard lock(mu_);
  ++calls_;
  return do_generate(embedding, depth, directive, settings);
}

std::string generation_input_digest(const Embedding& embedding, const DepthMap* depth,
                                    const DepthDirective& directive,
                                    const GenSettings& settings) {
  Sha256Hasher h;
  h.update("vcb-generation-v1");
  h.update(std::span(reinterpret_cast<const std::uint8_t*>(embedding.values().data()),
                     embedding.size() * sizeof(float)));
  h.update(embedding.encoder_id()).update(std::string_view("\0", 1));
  const nlohmann::json meta = {
      {"shape", {embedding.shape().rows, embedding.shape().cols}},
      {"depth_enabled", directive.enabled},
      {"depth_scale_bits", directive.enabled ? std::bit_cast<std::uint32_t>(directive.scale) : 0u},
      {"seed", settings.seed},
      {"steps", settings.steps},
      {"guidance", settings.guidance},
      {"width", settings.width},
      {"height", settings.height},
      {"backend_id", settings.backend_id},
  };
  h.update(meta.dump());
  if (directive.enabled && depth != nullptr) {
    const nlohmann::json dims = {depth->height, depth->width};
    h.update(dims.dump());
    h.update(std::span(reinterpret_cast<const std::uint8_t*>(depth->values.data()),
                       depth->values.size() * sizeof(float)));
  }
  return to_hex(h.finish());
}

std::vector<std::uint8_t> MockGenerator::do_generate(const Embedding& embedding,
                                                     const DepthMap* depth,
                                                     const DepthDirective& directive,
                                                     const GenSettings& settings) {
  const std::string digest = generation_input_digest(embedding, depth, directive, settings);
  std::uint64_t state = 0;
  for (int i = 0; i < 16; ++i) {
    const char c = digest[i];
    state = (state << 4) | static_cast<std::uint64_t>(c <= '9' ? c - '0' : c - 'a' + 10);
  }
  auto next = [&state]() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };

  constexpr int kBlock = 16;
  const int bw = (settings.width + kBlock - 1) / kBlock;
  const int bh = (settings.height + kBlock - 1) / kBlock;
  std::vector<std::uint8_t> palette(static_cast<std::size_t>(bw) * bh * 3);
  for (auto& c : palette) c = static_cast<std::uint8_t>(next() >> 56);

  RasterImage image{settings.width, settings.height, {}};
  image.rgb.resize(static_cast<std::size_t>(settings.width) * settings.height * 3);
  for (int y = 0; y < settings.height; ++y) {
    for (int x = 0; x < settings.width; ++x) {
      const std::size_t b = (static_cast<std::size_t>(y / kBlock) * bw + x / kBlock) * 3;
      const std::size_t p = (static_cast<std::size_t>(y) * settings.width + x) * 3;
      std::copy_n(&palette[b], 3, &image.rgb[p]);
    }
  }
  return encode_png(image);
}

std::vector<std::uint8_t> generate(GeneratorBackend& backend, const Embedding& e,
                                   const DepthMap* depth, double d,
                                   const GenSettings& settings) {
  const std::string id = backend.backend_id();
  const DepthDirective directive = depth_strength_to_scale(d, backend.max_depth_scale());
  if (directive.enabled && depth == nullptr) {
    fail(ErrorKind::kParameter, "a depth map is required when d > 0");
  }
  if (directive.enabled) depth->validate();
  if (!(e.shape() == backend.input_shape())) {
    fail(ErrorKind::kOperand, "generator '" + id + "' expects shape " +
                                  to_string(backend.input_shape()) + ", got " +
                                  to_string(e.shape()));
  }
  settings.validate(backend.latent_granularity());
  if (!settings.backend_id.empty() && settings.backend_id != id) {
    fail(ErrorKind::kParameter, "settings name backend '" + settings.backend_id +
                                    "' but generator is '" + id + "'");
  }
  GenSettings effective = settings;
  effective.backend_id = id;
  const DepthMap* effective_depth = directive.enabled ? depth : nullptr;

  std::vector<std::uint8_t> png;
  try {
    png = backend.generate(e, effective_depth, directive, effective);
    const RasterImage decoded = decode_image(ImageRef::from_bytes(png));
    if (decoded.width != settings.width || decoded.height != settings.height) {
      fail(ErrorKind::kBackend, "generator returned " + std::to_string(decoded.width) +
                                    "x" + std::to_string(decoded.height) + " image");
    }
  } catch (const Error& ex) {
    if (ex.kind() == ErrorKind::kBackend) throw;
    throw Error(ErrorKind::kBackend, "generator '" + id + "' failed: " + ex.detail());
  } catch (const std::exception& ex) {
    fail(ErrorKind::kBackend, "generator '" + id + "' failed: " + ex.what());
  }

  const nlohmann::json provenance = {
      {"input_digest", generation_input_digest(e, effective_depth, directive, effective)},
      {"seed", effective.seed},
      {"backend_id", id},
      {"encoder_id", e.encoder_id()},
      {"steps", effective.steps},
      {"guidance", effective.guidance},
      {"depth_enabled", directive.enabled},
      {"depth_scale", directive.scale},
  };
  return png_add_text(png, "vcb", provenance.dump());
}

}  // namespace vcb
