// SPDX-License-Identifier: Apache-2.0
//
// Binary embedding record:
//
//   offset  size  field
//   0       4     magic "VCBE"
//   4       4     format version, uint32 little-endian (currently 1)
//   8       4     header length N, uint32 little-endian
//   12      N     UTF-8 JSON header
//   12+N    4*R*C payload, float32 little-endian, row-major
//
// Header keys: "shape" [R, C], "dtype" "f32le", "encoder_id",
// "source_sha256" (may be empty) and "payload_sha256" (hex digest of the
// payload bytes).

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vcb/embedding.hpp"

namespace vcb {

inline constexpr std::uint32_t kEmbeddingFileVersion = 1;

struct EmbeddingFileHeader {
  Shape shape;
  std::string encoder_id;
  std::string source_sha256;
};

struct EmbeddingRecord {
  EmbeddingFileHeader header;
  Embedding embedding;
};

std::vector<std::uint8_t> serialize_embedding(const Embedding& e,
                                              const std::string& source_sha256 = {});

// Throws a format error whose message starts with the failed check: "magic",
// "version", "header", "shape", "dtype", "payload length", "checksum" or
// "payload values".
EmbeddingRecord parse_embedding(const std::vector<std::uint8_t>& bytes);

void write_embedding(const Embedding& e, const std::filesystem::path& path,
                     const std::string& source_sha256 = {});
Embedding read_embedding(const std::filesystem::path& path);
EmbeddingRecord read_embedding_record(const std::filesystem::path& path);

}  // namespace vcb
