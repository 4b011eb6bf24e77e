// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "support.hpp"
#include "vcb/embedding.hpp"
#include "vcb/error.hpp"

using namespace vcb;
using vcb::testing::random_embedding;

namespace {

Embedding row(std::vector<float> v, const std::string& id = "t") {
  const std::size_t n = v.size();
  return Embedding({1, n}, std::move(v), id);
}

std::vector<float> as_vector(const Embedding& e) {
  return {e.values().begin(), e.values().end()};
}

std::vector<int> as_bits(const SimilarityMask& m) { return {m.bits().begin(), m.bits().end()}; }

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected vcb::Error");
  return ErrorKind::kIo;
}

}  // namespace

TEST_CASE("similarity vector on a hand-computed example") {
  // |a-b| = 0.05, 1.0, 0.05, 0.9 against theta 0.2
  const auto m = similarity_vector(row({0.10f, 0.50f, -0.30f, 0.00f}),
                                   row({0.15f, -0.50f, -0.25f, 0.90f}), 0.2f);
  CHECK(as_bits(m) == std::vector<int>{1, 0, 1, 0});
  CHECK(m.count() == 2);
  CHECK(mask_fraction(m) == doctest::Approx(0.5));
  CHECK(m.theta() == 0.2f);
}

TEST_CASE("similarity threshold is strict") {
  CHECK(as_bits(similarity_vector(row({0.0f}), row({0.5f}), 0.5f)) == std::vector<int>{0});
  CHECK(as_bits(similarity_vector(row({0.0f}), row({0.5f}), std::nextafter(0.5f, 1.0f))) ==
        std::vector<int>{1});
}

TEST_CASE("theta zero masks nothing, even for identical inputs") {
  const auto a = row({1.0f, -2.0f, 0.0f});
  CHECK(similarity_vector(a, a, 0.0f).count() == 0);
  CHECK(similarity_vector(a, a, 1e-30f).count() == 3);
}

TEST_CASE("blend_common on a hand-computed example") {
  const Embedding base = row({1.0f, 2.0f});
  const SimilarityMask mask({1, 2}, {0, 1}, 0.1f);
  const Embedding out = blend_common(base, row({3.0f, 5.0f}), row({5.0f, 7.0f}), mask);
  CHECK(as_vector(out) == std::vector<float>{1.0f, 6.0f});
  CHECK(out.encoder_id() == "t");
}

TEST_CASE("blend_distinct on a hand-computed example") {
  const SimilarityMask mask({1, 2}, {1, 0}, 0.1f);
  const Embedding out = blend_distinct(row({1.0f, 2.0f}), row({3.0f, 5.0f}), mask);
  CHECK(as_vector(out) == std::vector<float>{1.0f, 5.0f});
}

TEST_CASE("average reference") {
  CHECK(as_vector(average_reference(row({1.0f, -3.0f}), row({2.0f, 3.0f}))) ==
        std::vector<float>{1.5f, 0.0f});
}

TEST_CASE("operand and parameter errors") {
  std::mt19937_64 rng(1);
  const Embedding a = random_embedding(rng, {2, 3});
  const Embedding b = random_embedding(rng, {3, 2});
  CHECK(kind_of([&] { similarity_vector(a, b, 0.1f); }) == ErrorKind::kOperand);
  CHECK(kind_of([&] { similarity_vector(a, a, -0.1f); }) == ErrorKind::kParameter);
  CHECK(kind_of([&] {
          similarity_vector(a, a, std::numeric_limits<float>::quiet_NaN());
        }) == ErrorKind::kParameter);
  CHECK(kind_of([&] { average_reference(a, random_embedding(rng, {2, 3}, "other")); }) ==
        ErrorKind::kOperand);
  const SimilarityMask wrong({3, 2}, std::vector<std::uint8_t>(6, 0), 0.1f);
  CHECK(kind_of([&] { blend_common(a, a, a, wrong); }) == ErrorKind::kOperand);
  CHECK(kind_of([&] { blend_distinct(a, a, wrong); }) == ErrorKind::kOperand);
  CHECK(kind_of([&] { Embedding({2, 2}, {1.0f}, "x"); }) == ErrorKind::kOperand);
  CHECK(kind_of([&] { Embedding({1, 1}, {INFINITY}, "x"); }) == ErrorKind::kOperand);
  CHECK(kind_of([&] { SimilarityMask({1, 1}, {2}, 0.0f); }) == ErrorKind::kOperand);
  CHECK(kind_of([] { parse_blend_mode("both"); }) == ErrorKind::kParameter);
}

TEST_CASE("mode names round-trip") {
  for (BlendMode m : {BlendMode::kCommon, BlendMode::kDistinct}) {
    CHECK(parse_blend_mode(to_string(m)) == m);
  }
}

TEST_CASE("distinct mode with mask from references keeps source where references agree") {
  std::mt19937_64 rng(vcb::testing::test_seed());
  for (int trial = 0; trial < 200; ++trial) {
    const Embedding base = random_embedding(rng, {4, 8});
    const Embedding ra = random_embedding(rng, {4, 8});
    const Embedding rb = random_embedding(rng, {4, 8});
    const auto mask = similarity_vector(ra, rb, 0.5f);
    const Embedding out = blend_distinct(base, ra, mask);
    for (std::size_t i = 0; i < out.size(); ++i) {
      REQUIRE(out[i] == (mask.bits()[i] ? base[i] : ra[i]));
    }
  }
}
