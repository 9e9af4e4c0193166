#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace oneiros {

using json = nlohmann::json;

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents. Throws ValidationError if unreadable.
std::string file_sha256(const std::filesystem::path& path);

/// Round a double to 6 significant decimal digits.
double round_sig6(double v);

/// Canonical JSON text: sorted keys (nlohmann's default object ordering),
/// every float rounded to 6 significant digits, two-space indent, trailing
/// newline. serialize(parse(s)) == s for any s produced here.
std::string canonical_dump(const json& j);

/// Reads a whole file as bytes. Throws ValidationError if missing.
std::string read_file(const std::filesystem::path& path);

/// Writes bytes to a file, creating parent directories.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace oneiros
