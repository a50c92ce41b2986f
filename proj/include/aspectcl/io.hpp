#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace aspectcl {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

}  // namespace aspectcl
