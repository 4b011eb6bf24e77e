// SPDX-License-Identifier: Apache-2.0

#include "vcb/encoder.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

#include "vcb/digest.hpp"
#include "vcb/embedding_file.hpp"
#include "vcb/error.hpp"

namespace vcb {

namespace fs = std::filesystem;

Embedding EncoderBackend::encode(const ImageRef& image) {
  std::lock_guard lock(mu_);
  ++calls_;
  return do_encode(image);
}

std::vector<float> MockEncoder::expand(const Sha256& digest, std::size_t count) {
  std::vector<float> out;
  out.reserve(count);
  for (std::uint32_t block = 0; out.size() < count; ++block) {
    const std::uint8_t counter[4] = {
        static_cast<std::uint8_t>(block), static_cast<std::uint8_t>(block >> 8),
        static_cast<std::uint8_t>(block >> 16),
        static_cast<std::uint8_t>(block >> 24)};
    const Sha256 h = Sha256Hasher()
                         .update(digest)
                         .update("vcb-mock-encoder")
                         .update(counter)
                         .finish();
    for (std::size_t w = 0; w < 8 && out.size() < count; ++w) {
      const std::uint32_t u = std::uint32_t{h[4 * w]} |
                              (std::uint32_t{h[4 * w + 1]} << 8) |
                              (std::uint32_t{h[4 * w + 2]} << 16) |
                              (std::uint32_t{h[4 * w + 3]} << 24);
      out.push_back(static_cast<float>(u / 4294967295.0 * 2.0 - 1.0));
    }
  }
  return out;
}

Embedding MockEncoder::do_encode(const ImageRef& image) {
  decode_image(image);
  return Embedding(kPromptShape, expand(sha256(image.bytes()), kPromptShape.size()),
                   kEncoderId);
}

Embedding encode(EncoderBackend& backend, const ImageRef& image) {
  const std::string id = backend.encoder_id();
  try {
    Embedding e = backend.encode(image);
    if (!(e.shape() == backend.output_shape())) {
      fail(ErrorKind::kBackend, "encoder '" + id + "' returned shape " +
                                    to_string(e.shape()) + ", expected " +
                                    to_string(backend.output_shape()));
    }
    if (e.encoder_id() != id) {
      fail(ErrorKind::kBackend, "encoder '" + id + "' tagged its output as '" +
                                    e.encoder_id() + "'");
    }
    return e;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    fail(ErrorKind::kBackend, "encoder '" + id + "' failed: " + ex.what());
  }
}

namespace {

void require_path_safe(const std::string& encoder_id) {
  const bool ok = !encoder_id.empty() && encoder_id != "." && encoder_id != ".." &&
                  std::all_of(encoder_id.begin(), encoder_id.end(), [](char c) {
                    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' ||
                           c == '_' || c == '.';
                  });
  if (!ok) {
    fail(ErrorKind::kParameter,
         "encoder_id '" + encoder_id + "' is not usable as a cache directory name");
  }
}

}  // namespace

fs::path cache_entry_path(const fs::path& cache_dir, const std::string& encoder_id,
                          const std::string& image_sha256) {
  require_path_safe(encoder_id);
  return cache_dir / encoder_id / (image_sha256 + ".vcbe");
}

Embedding cached_encode(EncoderBackend& backend, const ImageRef& image,
                        const fs::path& cache_dir, std::vector<std::string>* warnings) {
  const std::string id = backend.encoder_id();
  const fs::path entry = cache_entry_path(cache_dir, id, image.sha256());
  std::error_code ec;
  if (fs::exists(entry, ec)) {
    try {
      EmbeddingRecord record = read_embedding_record(entry);
      if (record.embedding.encoder_id() == id &&
          record.header.source_sha256 == image.sha256() &&
          record.embedding.shape() == backend.output_shape()) {
        return std::move(record.embedding);
      }
      fail(ErrorKind::kFormat, "entry does not match its key");
    } catch (const Error& ex) {
      const std::string msg =
          "discarding corrupt cache entry " + entry.string() + " (" + ex.what() + ")";
      spdlog::warn("{}", msg);
      if (warnings != nullptr) warnings->push_back(msg);
      fs::remove(entry, ec);
    }
  }
  Embedding e = encode(backend, image);
  write_embedding(e, entry, image.sha256());
  return e;
}

}  // namespace vcb
