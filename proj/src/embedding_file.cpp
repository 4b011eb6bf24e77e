// SPDX-License-Identifier: Apache-2.0

#include "vcb/embedding_file.hpp"

#include <bit>
#include <cstring>
#include <nlohmann/json.hpp>

#include "vcb/digest.hpp"
#include "vcb/error.hpp"
#include "vcb/files.hpp"

namespace vcb {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'V', 'C', 'B', 'E'};
constexpr std::size_t kPreambleSize = 12;
// Guards against absurd header lengths in corrupt files.
constexpr std::uint32_t kMaxHeaderSize = 1 << 16;

void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_le32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
         (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

[[noreturn]] void format_error(const std::string& check, const std::string& what) {
  fail(ErrorKind::kFormat, check + ": " + what);
}

}  // namespace

std::vector<std::uint8_t> serialize_embedding(const Embedding& e,
                                              const std::string& source_sha256) {
  std::vector<std::uint8_t> payload;
  payload.reserve(e.size() * 4);
  for (float v : e.values()) put_le32(payload, std::bit_cast<std::uint32_t>(v));

  const json header = {
      {"shape", {e.shape().rows, e.shape().cols}},
      {"dtype", "f32le"},
      {"encoder_id", e.encoder_id()},
      {"source_sha256", source_sha256},
      {"payload_sha256", sha256_hex(payload)},
  };
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le32(out, kEmbeddingFileVersion);
  put_le32(out, static_cast<std::uint32_t>(header_text.size()));
  out.insert(out.end(), header_text.begin(), header_text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

EmbeddingRecord parse_embedding(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    format_error("magic", "file does not start with VCBE");
  }
  if (bytes.size() < kPreambleSize) format_error("header", "truncated preamble");
  const std::uint32_t version = get_le32(&bytes[4]);
  if (version != kEmbeddingFileVersion) {
    format_error("version", "unsupported format version " + std::to_string(version));
  }
  const std::uint32_t header_size = get_le32(&bytes[8]);
  if (header_size == 0 || header_size > kMaxHeaderSize ||
      kPreambleSize + header_size > bytes.size()) {
    format_error("header", "header length " + std::to_string(header_size) +
                               " exceeds file");
  }
  const std::string header_text(bytes.begin() + kPreambleSize,
                                bytes.begin() + kPreambleSize + header_size);
  json header = json::parse(header_text, nullptr, /*allow_exceptions=*/false);
  if (header.is_discarded() || !header.is_object()) {
    format_error("header", "header is not a JSON object");
  }

  EmbeddingFileHeader parsed;
  std::string payload_digest;
  try {
    const auto& shape = header.at("shape");
    if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_unsigned() ||
        !shape[1].is_number_unsigned()) {
      format_error("shape", "shape must be two non-negative integers");
    }
    parsed.shape = {shape[0].get<std::size_t>(), shape[1].get<std::size_t>()};
    if (header.at("dtype").get<std::string>() != "f32le") {
      format_error("dtype", "unsupported element type");
    }
    parsed.encoder_id = header.at("encoder_id").get<std::string>();
    parsed.source_sha256 = header.at("source_sha256").get<std::string>();
    payload_digest = header.at("payload_sha256").get<std::string>();
  } catch (const json::exception& ex) {
    format_error("header", std::string("missing or mistyped field: ") + ex.what());
  }
  if (parsed.shape.rows == 0 || parsed.shape.cols == 0 ||
      parsed.shape.rows > (1u << 20) || parsed.shape.cols > (1u << 20)) {
    format_error("shape", "shape " + to_string(parsed.shape) + " out of range");
  }

  const std::size_t payload_offset = kPreambleSize + header_size;
  const std::size_t expected = parsed.shape.size() * 4;
  const std::size_t actual = bytes.size() - payload_offset;
  if (actual != expected) {
    format_error("payload length", "expected " + std::to_string(expected) +
                                       " bytes, found " + std::to_string(actual));
  }
  const std::span<const std::uint8_t> payload(bytes.data() + payload_offset, actual);
  if (sha256_hex(payload) != payload_digest) {
    format_error("checksum", "payload digest does not match header");
  }

  std::vector<float> values(parsed.shape.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(get_le32(&payload[i * 4]));
  }
  try {
    Embedding e(parsed.shape, std::move(values), parsed.encoder_id);
    return {std::move(parsed), std::move(e)};
  } catch (const Error& ex) {
    format_error("payload values", ex.detail());
  }
}

void write_embedding(const Embedding& e, const std::filesystem::path& path,
                     const std::string& source_sha256) {
  write_file_atomic(path, serialize_embedding(e, source_sha256));
}

Embedding read_embedding(const std::filesystem::path& path) {
  return read_embedding_record(path).embedding;
}

EmbeddingRecord read_embedding_record(const std::filesystem::path& path) {
  return parse_embedding(read_file(path));
}

}  // namespace vcb
