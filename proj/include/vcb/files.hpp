// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vcb {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

// Writes to a uniquely named sibling temporary, then renames over `path`.
// Readers observe either the old content, the new content, or no file.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& text);

std::string make_uuid();
// UTC, ISO-8601 with millisecond precision.
std::string utc_timestamp();

}  // namespace vcb
