#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

namespace daclab {

// FNV-1a 64-bit, used for architecture hashes and RNG stream labels.
std::uint64_t fnv1a64_bytes(const void* data, std::size_t len,
                            std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull);

// CRC-32 (IEEE 802.3 polynomial, zlib-compatible).
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc = 0);

// SHA-256 of a byte buffer, returned as lowercase hex.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

std::string shape_str(const std::vector<std::size_t>& shape);

// Fixed-format float for CSV output (6 decimals, locale independent).
std::string format_fixed(double v, int decimals = 6);

}  // namespace daclab
