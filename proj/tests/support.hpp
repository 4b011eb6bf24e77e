// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit and acceptance tests.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "vcb/embedding.hpp"
#include "vcb/image.hpp"

namespace vcb::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Deterministic PNG whose pixels depend on `seed`.
ImageRef make_png(int width, int height, std::uint32_t seed);

std::vector<float> random_values(std::mt19937_64& rng, std::size_t n, float lo = -1.0f,
                                 float hi = 1.0f);
Embedding random_embedding(std::mt19937_64& rng, Shape shape, const std::string& id = "test");

// Sets VCB_TEST_SEED-style reproducible seeds; prints the seed on first use.
std::uint64_t test_seed();

}  // namespace vcb::testing
