// SPDX-License-Identifier: Apache-2.0
//
// Blending arithmetic over image-prompt embeddings.
//
// An embedding is a row-major float tensor of shape [tokens, dims]; the
// reference encoder produces [4, 768]. Two reference embeddings are compared
// element by element against an absolute threshold to obtain a binary
// similarity mask, which then selects, per element, between the source
// embedding and the reference(s). No normalization is applied anywhere, so the
// threshold is expressed in raw embedding units.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vcb {

inline constexpr std::size_t kPromptTokens = 4;
inline constexpr std::size_t kPromptDims = 768;

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline constexpr Shape kPromptShape{kPromptTokens, kPromptDims};

std::string to_string(const Shape& shape);

/// Immutable embedding tensor tagged with the encoder that produced it.
/// Construction rejects size mismatches and non-finite values.
class Embedding {
 public:
  Embedding(Shape shape, std::vector<float> values, std::string encoder_id);

  const Shape& shape() const noexcept { return shape_; }
  std::span<const float> values() const noexcept { return values_; }
  const std::string& encoder_id() const noexcept { return encoder_id_; }
  std::size_t size() const noexcept { return values_.size(); }
  float operator[](std::size_t i) const { return values_[i]; }

  // Bit-level equality, including the encoder tag.
  bool identical(const Embedding& other) const noexcept;
  friend bool operator==(const Embedding& a, const Embedding& b) {
    return a.identical(b);
  }

 private:
  Shape shape_;
  std::vector<float> values_;
  std::string encoder_id_;
};

/// Binary mask marking the elements two references share within theta.
class SimilarityMask {
 public:
  SimilarityMask(Shape shape, std::vector<std::uint8_t> bits, float theta);

  const Shape& shape() const noexcept { return shape_; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  float theta() const noexcept { return theta_; }
  std::size_t size() const noexcept { return bits_.size(); }
  std::size_t count() const noexcept;

  friend bool operator==(const SimilarityMask&, const SimilarityMask&) = default;

 private:
  Shape shape_;
  std::vector<std::uint8_t> bits_;
  float theta_;
};

enum class BlendMode { kCommon, kDistinct };

std::string_view to_string(BlendMode mode);
BlendMode parse_blend_mode(std::string_view text);

// Element i is 1 iff |a_i - b_i| < theta. The inequality is strict, so
// theta == 0 always yields an all-zero mask.
SimilarityMask similarity_vector(const Embedding& a, const Embedding& b,
                                 float theta);

Embedding average_reference(const Embedding& ref_a, const Embedding& ref_b);

// (1 - w) * base + w * (ref_a + ref_b) / 2
Embedding blend_common(const Embedding& base, const Embedding& ref_a,
                       const Embedding& ref_b, const SimilarityMask& mask);

// w * base + (1 - w) * ref_a. The mask is expected to come from
// similarity_vector(ref_a, ref_b, theta); this is not checked.
Embedding blend_distinct(const Embedding& base, const Embedding& ref_a,
                         const SimilarityMask& mask);

double mask_fraction(const SimilarityMask& mask);

}  // namespace vcb
