#pragma once

#include <string>
#include <string_view>

namespace fairpipe {

// Hex digest of the SHA-256 hash of `data`.
std::string sha256_hex(std::string_view data);

// Hex digest of a file's contents. Throws std::runtime_error if unreadable.
std::string sha256_file_hex(const std::string& path);

}  // namespace fairpipe
