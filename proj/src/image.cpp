// SPDX-License-Identifier: Apache-2.0

#include "vcb/image.hpp"

#include <jpeglib.h>
#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <csetjmp>
#include <cstring>

#include "vcb/digest.hpp"
#include "vcb/error.hpp"

namespace vcb {

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G',
                                           0x0d, 0x0a, 0x1a, 0x0a};

bool starts_with(const std::vector<std::uint8_t>& bytes, const std::uint8_t* sig,
                 std::size_t n) {
  return bytes.size() >= n && std::memcmp(bytes.data(), sig, n) == 0;
}

bool is_png(const std::vector<std::uint8_t>& bytes) {
  return starts_with(bytes, kPngSignature, sizeof(kPngSignature));
}

bool is_jpeg(const std::vector<std::uint8_t>& bytes) {
  static constexpr std::uint8_t kSoi[3] = {0xff, 0xd8, 0xff};
  return starts_with(bytes, kSoi, sizeof(kSoi));
}

struct PngReadState {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t offset;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t len) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->offset + len > st->size) png_error(png, "truncated PNG");
  std::memcpy(out, st->data + st->offset, len);
  st->offset += len;
}

void png_error_handler(png_structp png, png_const_charp msg) {
  auto* message = static_cast<std::string*>(png_get_error_ptr(png));
  if (message != nullptr) *message = msg;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

RasterImage decode_png(const std::vector<std::uint8_t>& bytes) {
  std::string message;
  png_structp png = png_create_read_struct(
      PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kInput, "cannot allocate PNG decoder");
  }
  RasterImage image;
  std::vector<png_bytep> rows;
  PngReadState state{bytes.data(), bytes.size(), 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kInput, "undecodable PNG: " + message);
  }
  png_set_read_fn(png, &state, png_read_from_memory);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(image.width) * 3) {
    png_error(png, "unexpected channel layout");
  }
  image.rgb.resize(static_cast<std::size_t>(image.width) * image.height * 3);
  rows.resize(image.height);
  for (int y = 0; y < image.height; ++y) {
    rows[y] = image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

RasterImage decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.output_message = [](j_common_ptr) {};
  RasterImage image;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::kInput, std::string("undecodable JPEG: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  image.width = static_cast<int>(cinfo.output_width);
  image.height = static_cast<int>(cinfo.output_height);
  image.rgb.resize(static_cast<std::size_t>(image.width) * image.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = image.rgb.data() +
                   static_cast<std::size_t>(cinfo.output_scanline) * image.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return image;
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
         (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

}  // namespace

ImageRef ImageRef::from_bytes(std::vector<std::uint8_t> bytes) {
  if (bytes.empty()) fail(ErrorKind::kInput, "image content is empty");
  ImageRef ref;
  if (is_png(bytes)) {
    ref.media_type_ = "png";
  } else if (is_jpeg(bytes)) {
    ref.media_type_ = "jpeg";
  } else {
    fail(ErrorKind::kInput, "unrecognized image format (expected PNG or JPEG)");
  }
  ref.sha256_ = sha256_hex(bytes);
  ref.bytes_ = std::make_shared<const std::vector<std::uint8_t>>(std::move(bytes));
  return ref;
}

std::string ImageRef::file_extension() const {
  return media_type_ == "jpeg" ? ".jpg" : ".png";
}

RasterImage decode_image(const ImageRef& image) {
  RasterImage raster = image.media_type() == "png" ? decode_png(image.bytes())
                                                   : decode_jpeg(image.bytes());
  if (raster.width <= 0 || raster.height <= 0) {
    fail(ErrorKind::kInput, "image has zero extent");
  }
  return raster;
}

std::vector<std::uint8_t> encode_png(const RasterImage& image,
                                     const PngText& text) {
  if (image.width <= 0 || image.height <= 0 ||
      image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    fail(ErrorKind::kParameter, "raster dimensions do not match pixel buffer");
  }
  std::string message;
  png_structp png = png_create_write_struct(
      PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "cannot allocate PNG encoder");
  }
  std::vector<std::uint8_t> out;
  std::vector<png_text> chunks;
  std::vector<png_bytep> rows(image.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "PNG encoding failed: " + message);
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        buf->insert(buf->end(), data, data + len);
      },
      nullptr);
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (const auto& [key, value] : text) {
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = const_cast<char*>(key.c_str());
    t.text = const_cast<char*>(value.c_str());
    t.text_length = value.size();
    chunks.push_back(t);
  }
  if (!chunks.empty()) {
    png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  }
  for (int y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.rgb.data()) +
              static_cast<std::size_t>(y) * image.width * 3;
  }
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> png_add_text(const std::vector<std::uint8_t>& png,
                                       const std::string& key,
                                       const std::string& value) {
  if (!is_png(png) || png.size() < 8 + 12) {
    fail(ErrorKind::kInput, "not a PNG stream");
  }
  if (key.empty() || key.size() > 79) {
    fail(ErrorKind::kParameter, "PNG text key must be 1-79 bytes");
  }
  // Locate IEND by walking chunks.
  std::size_t pos = 8;
  std::size_t iend = std::string::npos;
  while (pos + 12 <= png.size()) {
    const std::uint32_t len = get_be32(&png[pos]);
    if (std::memcmp(&png[pos + 4], "IEND", 4) == 0) {
      iend = pos;
      break;
    }
    pos += 12 + static_cast<std::size_t>(len);
  }
  if (iend == std::string::npos) fail(ErrorKind::kInput, "PNG has no IEND");

  std::vector<std::uint8_t> body;
  body.insert(body.end(), {'t', 'E', 'X', 't'});
  body.insert(body.end(), key.begin(), key.end());
  body.push_back(0);
  body.insert(body.end(), value.begin(), value.end());

  std::vector<std::uint8_t> out(png.begin(), png.begin() + iend);
  put_be32(out, static_cast<std::uint32_t>(body.size() - 4));
  out.insert(out.end(), body.begin(), body.end());
  put_be32(out, static_cast<std::uint32_t>(
                    crc32(0L, body.data(), static_cast<uInt>(body.size()))));
  out.insert(out.end(), png.begin() + iend, png.end());
  return out;
}

PngText png_read_text(const std::vector<std::uint8_t>& png) {
  if (!is_png(png)) fail(ErrorKind::kInput, "not a PNG stream");
  PngText out;
  std::size_t pos = 8;
  while (pos + 12 <= png.size()) {
    const std::uint32_t len = get_be32(&png[pos]);
    if (pos + 12 + len > png.size()) break;
    if (std::memcmp(&png[pos + 4], "tEXt", 4) == 0) {
      const auto* begin = &png[pos + 8];
      const auto* end = begin + len;
      const auto* nul = std::find(begin, end, std::uint8_t{0});
      if (nul != end) {
        out.emplace(std::string(begin, nul), std::string(nul + 1, end));
      }
    }
    pos += 12 + static_cast<std::size_t>(len);
  }
  return out;
}

}  // namespace vcb
