// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <cstdlib>
#include <iostream>
#include <system_error>

#include "vcb/files.hpp"

namespace fs = std::filesystem;

namespace vcb::testing {

TempDir::TempDir() : path_(fs::temp_directory_path() / ("vcb-test-" + make_uuid())) {
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

ImageRef make_png(int width, int height, std::uint32_t seed) {
  RasterImage raster{width, height, {}};
  raster.rgb.resize(static_cast<std::size_t>(width) * height * 3);
  std::uint32_t x = seed * 2654435761u + 1;
  for (auto& px : raster.rgb) {
    x ^= x << 13;
    x ^= x >> 17;
    x ^= x << 5;
    px = static_cast<std::uint8_t>(x);
  }
  return ImageRef::from_bytes(encode_png(raster));
}

std::vector<float> random_values(std::mt19937_64& rng, std::size_t n, float lo, float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

Embedding random_embedding(std::mt19937_64& rng, Shape shape, const std::string& id) {
  return Embedding(shape, random_values(rng, shape.size()), id);
}

std::uint64_t test_seed() {
  static const std::uint64_t seed = [] {
    const char* env = std::getenv("VCB_TEST_SEED");
    const std::uint64_t s = env ? std::strtoull(env, nullptr, 10) : 20240521u;
    std::cerr << "VCB_TEST_SEED=" << s << "\n";
    return s;
  }();
  return seed;
}

}  // namespace vcb::testing
