#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "suesr/parameters.hpp"

namespace suesr {

/// On-disk parameter store: `weights.bin` holds the arrays as concatenated
/// little-endian float32 values, `index.json` lists
/// {"name", "shape", "offset"} records in order (offset in bytes).
void write_tensor_store(const std::filesystem::path& dir, const ParameterSet& params);

/// Reads a store written by write_tensor_store. The whole file is validated
/// against the index before any array is returned.
ParameterSet read_tensor_store(const std::filesystem::path& dir);

/// FNV-1a 64-bit hash, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);
std::uint64_t fnv1a(const std::string& bytes);

/// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace suesr
