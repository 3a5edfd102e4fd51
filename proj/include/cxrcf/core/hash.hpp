#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>

namespace cxrcf {

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Stable 64-bit hash of an ordered tuple of strings: the first eight bytes
/// (big-endian) of SHA-256 over the parts joined by the unit separator 0x1f.
std::uint64_t stable_hash64(std::initializer_list<std::string_view> parts);

} // namespace cxrcf
