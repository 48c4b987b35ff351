#pragma once

// Little-endian primitives shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cinelstm/errors.hpp"

namespace cinelstm::binio {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline void read_exact(std::istream& is, void* dst, std::size_t n, const char* what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_exact(is, b, 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
  const std::uint64_t lo = get_u32(is, what);
  const std::uint64_t hi = get_u32(is, what);
  return lo | (hi << 32);
}

inline float get_f32(std::istream& is, const char* what) { return std::bit_cast<float>(get_u32(is, what)); }

inline void expect_magic(std::istream& is, const std::string& magic, const char* what) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (static_cast<std::size_t>(is.gcount()) != magic.size() || got != magic) {
    throw FormatError(std::string(what) + ": bad magic, expected \"" + magic + "\"");
  }
}

}  // namespace cinelstm::binio
