// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "support.hpp"
#include "vcb/digest.hpp"
#include "vcb/embedding_file.hpp"
#include "vcb/error.hpp"
#include "vcb/files.hpp"
#include "vcb/image.hpp"

using namespace vcb;
using vcb::testing::TempDir;

namespace {

std::string format_check(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_embedding(bytes);
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::kFormat);
    return e.detail().substr(0, e.detail().find(':'));
  }
  return "accepted";
}

}  // namespace

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex(std::string_view("")) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string_view("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  Sha256Hasher h;
  h.update(std::string_view("a")).update(std::string_view("bc"));
  CHECK(to_hex(h.finish()) == sha256_hex(std::string_view("abc")));
  CHECK(is_sha256_hex(sha256_hex(std::string_view("x"))));
  CHECK_FALSE(is_sha256_hex("ABC"));
  CHECK_FALSE(is_sha256_hex(std::string(64, 'g')));
}

TEST_CASE("atomic writes replace content and leave no temp files") {
  TempDir dir;
  write_file_atomic(dir / "a.txt", std::string("one"));
  write_file_atomic(dir / "a.txt", std::string("two"));
  CHECK(read_text_file(dir / "a.txt") == "two");
  CHECK(std::distance(std::filesystem::directory_iterator(dir.path()),
                      std::filesystem::directory_iterator()) == 1);
  CHECK_THROWS_AS(read_file(dir / "missing"), Error);
}

TEST_CASE("uuids and timestamps") {
  CHECK(make_uuid() != make_uuid());
  CHECK(make_uuid().size() == 36);
  const std::string ts = utc_timestamp();
  CHECK(ts.size() == 24);
  CHECK(ts.back() == 'Z');
}

TEST_CASE("embedding file round trip is bit-exact") {
  std::mt19937_64 rng(vcb::testing::test_seed());
  TempDir dir;
  for (int i = 0; i < 20; ++i) {
    const Embedding e = vcb::testing::random_embedding(rng, kPromptShape, "enc-" + std::to_string(i));
    const std::string src = sha256_hex(std::string_view("src"));
    write_embedding(e, dir / "e.vcbe", src);
    const EmbeddingRecord r = read_embedding_record(dir / "e.vcbe");
    CHECK(r.embedding == e);
    CHECK(r.header.source_sha256 == src);
    CHECK(r.header.encoder_id == e.encoder_id());
    CHECK(r.header.shape == kPromptShape);
    CHECK(parse_embedding(serialize_embedding(e)).embedding == e);
  }
}

TEST_CASE("embedding file corruptions are rejected by name") {
  std::mt19937_64 rng(7);
  const Embedding e = vcb::testing::random_embedding(rng, {2, 3});
  const auto good = serialize_embedding(e);
  std::uint32_t header_len;
  std::memcpy(&header_len, &good[8], 4);
  const std::size_t payload_at = 12 + header_len;

  auto mutate = [&](auto&& f) {
    auto b = good;
    f(b);
    return format_check(b);
  };
  CHECK(format_check(good) == "accepted");
  CHECK(mutate([](auto& b) { b[0] = 'X'; }) == "magic");
  CHECK(mutate([](auto& b) { b.resize(2); }) == "magic");
  CHECK(mutate([](auto& b) { b[4] = 2; }) == "version");
  CHECK(mutate([](auto& b) { b.resize(10); }) == "header");
  CHECK(mutate([](auto& b) { b[8] = 0xff; b[9] = 0xff; }) == "header");
  CHECK(mutate([&](auto& b) { b[12] = '['; }) == "header");
  CHECK(mutate([&](auto& b) { b.pop_back(); }) == "payload length");
  CHECK(mutate([&](auto& b) { b.push_back(0); }) == "payload length");
  CHECK(mutate([&](auto& b) { b[payload_at] ^= 1; }) == "checksum");

  // a header that lies about the shape
  auto reshaped = [&](const std::string& from, const std::string& to) {
    std::string text(good.begin(), good.end());
    const auto at = text.find(from);
    REQUIRE(at != std::string::npos);
    text.replace(at, from.size(), to);
    return format_check(std::vector<std::uint8_t>(text.begin(), text.end()));
  };
  CHECK(reshaped("[2,3]", "[3,2]") == "accepted");
  CHECK(reshaped("[2,3]", "[2,4]") == "payload length");
  CHECK(reshaped("[2,3]", "[2,-]") == "header");
  CHECK(reshaped("\"f32le\"", "\"f64le\"") == "dtype");
}

TEST_CASE("non-finite payload values are rejected") {
  Embedding e({1, 1}, {1.0f}, "t");
  auto bytes = serialize_embedding(e);
  // overwrite payload with NaN and fix up the digest by re-serializing the header
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::uint32_t header_len;
  std::memcpy(&header_len, &bytes[8], 4);
  std::vector<std::uint8_t> payload(4);
  std::memcpy(payload.data(), &nan, 4);
  std::string header(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  const std::string old_digest = sha256_hex(std::span<const std::uint8_t>(&bytes[12 + header_len], 4));
  header.replace(header.find(old_digest), 64, sha256_hex(payload));
  std::vector<std::uint8_t> out(bytes.begin(), bytes.begin() + 12);
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  CHECK(format_check(out) == "payload values");
}

TEST_CASE("image sniffing and decoding") {
  const ImageRef png = vcb::testing::make_png(5, 3, 1);
  CHECK(png.media_type() == "png");
  CHECK(png.file_extension() == ".png");
  CHECK(png.sha256() == sha256_hex(png.bytes()));
  const RasterImage r = decode_image(png);
  CHECK(r.width == 5);
  CHECK(r.height == 3);
  CHECK(r.rgb.size() == 45);

  CHECK_THROWS_AS(ImageRef::from_bytes({}), Error);
  CHECK_THROWS_AS(ImageRef::from_bytes({1, 2, 3, 4, 5, 6, 7, 8}), Error);
  auto truncated = png.bytes();
  truncated.resize(truncated.size() / 2);
  const ImageRef broken = ImageRef::from_bytes(truncated);
  try {
    decode_image(broken);
    FAIL("decoded a truncated png");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInput);
  }
}

TEST_CASE("png text chunks") {
  const ImageRef png = vcb::testing::make_png(4, 4, 2);
  const auto tagged = png_add_text(png.bytes(), "vcb", "{\"x\":1}");
  CHECK(png_read_text(tagged).at("vcb") == "{\"x\":1}");
  const RasterImage a = decode_image(png);
  const RasterImage b = decode_image(ImageRef::from_bytes(tagged));
  CHECK(a.rgb == b.rgb);
  const auto encoded = encode_png(a, {{"k", "v"}});
  CHECK(png_read_text(encoded).at("k") == "v");
}
