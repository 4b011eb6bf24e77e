// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace vcb {

/// Raw image file content plus its content digest. Bytes are shared so copies
/// of an ImageRef are cheap.
class ImageRef {
 public:
  // Sniffs the media type from the file signature (png or jpeg) and hashes
  // the content. Throws an input error on empty or unrecognized data.
  static ImageRef from_bytes(std::vector<std::uint8_t> bytes);

  const std::vector<std::uint8_t>& bytes() const noexcept { return *bytes_; }
  const std::string& sha256() const noexcept { return sha256_; }
  const std::string& media_type() const noexcept { return media_type_; }
  // "png" -> ".png", "jpeg" -> ".jpg"
  std::string file_extension() const;

 private:
  ImageRef() = default;

  std::shared_ptr<const std::vector<std::uint8_t>> bytes_;
  std::string sha256_;
  std::string media_type_;
};

/// 8-bit RGB raster, row-major, interleaved.
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

// Throws an input error when the bytes do not decode.
RasterImage decode_image(const ImageRef& image);

using PngText = std::map<std::string, std::string>;

std::vector<std::uint8_t> encode_png(const RasterImage& image,
                                     const PngText& text = {});

// Splices a tEXt chunk in front of IEND without re-encoding pixel data.
std::vector<std::uint8_t> png_add_text(const std::vector<std::uint8_t>& png,
                                       const std::string& key,
                                       const std::string& value);

PngText png_read_text(const std::vector<std::uint8_t>& png);

}  // namespace vcb
