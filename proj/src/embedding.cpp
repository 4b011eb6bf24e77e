// SPDX-License-Identifier: Apache-2.0

#include "vcb/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "vcb/error.hpp"

namespace vcb {

std::string to_string(const Shape& shape) {
  return "[" + std::to_string(shape.rows) + ", " + std::to_string(shape.cols) +
         "]";
}

Embedding::Embedding(Shape shape, std::vector<float> values,
                     std::string encoder_id)
    : shape_(shape),
      values_(std::move(values)),
      encoder_id_(std::move(encoder_id)) {
  if (shape_.size() == 0) {
    fail(ErrorKind::kOperand, "embedding shape " + to_string(shape_) +
                                  " has no elements");
  }
  if (values_.size() != shape_.size()) {
    fail(ErrorKind::kOperand,
         "embedding has " + std::to_string(values_.size()) +
             " values, shape " + to_string(shape_) + " needs " +
             std::to_string(shape_.size()));
  }
  const auto bad = std::find_if(values_.begin(), values_.end(),
                                [](float v) { return !std::isfinite(v); });
  if (bad != values_.end()) {
    fail(ErrorKind::kOperand,
         "embedding value at index " +
             std::to_string(std::distance(values_.begin(), bad)) +
             " is not finite");
  }
}

bool Embedding::identical(const Embedding& other) const noexcept {
  return shape_ == other.shape_ && encoder_id_ == other.encoder_id_ &&
         std::memcmp(values_.data(), other.values_.data(),
                     values_.size() * sizeof(float)) == 0;
}

SimilarityMask::SimilarityMask(Shape shape, std::vector<std::uint8_t> bits,
                               float theta)
    : shape_(shape), bits_(std::move(bits)), theta_(theta) {
  if (bits_.size() != shape_.size()) {
    fail(ErrorKind::kOperand, "mask has " + std::to_string(bits_.size()) +
                                  " elements, shape " + to_string(shape_) +
                                  " needs " + std::to_string(shape_.size()));
  }
  if (std::any_of(bits_.begin(), bits_.end(),
                  [](std::uint8_t b) { return b > 1; })) {
    fail(ErrorKind::kOperand, "mask elements must be 0 or 1");
  }
}

std::size_t SimilarityMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

std::string_view to_string(BlendMode mode) {
  return mode == BlendMode::kCommon ? "common" : "distinct";
}

BlendMode parse_blend_mode(std::string_view text) {
  if (text == "common") return BlendMode::kCommon;
  if (text == "distinct") return BlendMode::kDistinct;
  fail(ErrorKind::kParameter,
       "mode must be 'common' or 'distinct', got '" + std::string(text) + "'");
}

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    fail(ErrorKind::kOperand, std::string(what) + ": shape mismatch " +
                                  to_string(a) + " vs " + to_string(b));
  }
}

}  // namespace

SimilarityMask similarity_vector(const Embedding& a, const Embedding& b,
                                 float theta) {
  require_same_shape(a.shape(), b.shape(), "similarity_vector");
  if (!std::isfinite(theta) || theta < 0.0f) {
    fail(ErrorKind::kParameter,
         "theta must be finite and non-negative, got " + std::to_string(theta));
  }
  const auto va = a.values();
  const auto vb = b.values();
  std::vector<std::uint8_t> bits(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) {
    bits[i] = static_cast<std::uint8_t>(std::fabs(va[i] - vb[i]) < theta);
  }
  return SimilarityMask(a.shape(), std::move(bits), theta);
}

Embedding average_reference(const Embedding& ref_a, const Embedding& ref_b) {
  require_same_shape(ref_a.shape(), ref_b.shape(), "average_reference");
  if (ref_a.encoder_id() != ref_b.encoder_id()) {
    fail(ErrorKind::kOperand, "average_reference: encoder mismatch '" +
                                  ref_a.encoder_id() + "' vs '" +
                                  ref_b.encoder_id() + "'");
  }
  const auto va = ref_a.values();
  const auto vb = ref_b.values();
  std::vector<float> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = (va[i] + vb[i]) * 0.5f;
  return Embedding(ref_a.shape(), std::move(out), ref_a.encoder_id());
}

namespace {

// out = (1 - w) * keep_if_zero + w * take_if_one
std::vector<float> mix(std::span<const float> keep_if_zero,
                       std::span<const float> take_if_one,
                       std::span<const std::uint8_t> bits) {
  std::vector<float> out(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const float w = static_cast<float>(bits[i]);
    out[i] = (1.0f - w) * keep_if_zero[i] + w * take_if_one[i];
  }
  return out;
}

}  // namespace

Embedding blend_common(const Embedding& base, const Embedding& ref_a,
                       const Embedding& ref_b, const SimilarityMask& mask) {
  require_same_shape(base.shape(), ref_a.shape(), "blend_common");
  require_same_shape(base.shape(), mask.shape(), "blend_common");
  const Embedding ref = average_reference(ref_a, ref_b);
  return Embedding(base.shape(), mix(base.values(), ref.values(), mask.bits()),
                   base.encoder_id());
}

Embedding blend_distinct(const Embedding& base, const Embedding& ref_a,
                         const SimilarityMask& mask) {
  require_same_shape(base.shape(), ref_a.shape(), "blend_distinct");
  require_same_shape(base.shape(), mask.shape(), "blend_distinct");
  return Embedding(base.shape(), mix(ref_a.values(), base.values(), mask.bits()),
                   base.encoder_id());
}

double mask_fraction(const SimilarityMask& mask) {
  return static_cast<double>(mask.count()) / static_cast<double>(mask.size());
}

}  // namespace vcb
