#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "clusterseq/core/error.hpp"

namespace clusterseq::binary {

// Little-endian fixed-width encoding, independent of host byte order.

template <typename U>
void write_uint(std::ostream& out, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(U));
}

template <typename U>
U read_uint(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) fail(ErrorCode::format, "truncated binary file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void write_f32(std::ostream& out, float value) { write_uint(out, std::bit_cast<std::uint32_t>(value)); }
inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_uint<std::uint32_t>(in)); }

inline void write_string(std::ostream& out, const std::string& s) {
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_uint<std::uint32_t>(in);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) fail(ErrorCode::format, "truncated binary file");
  return s;
}

inline void expect_magic(std::istream& in, const std::string& magic) {
  std::string got(magic.size(), '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    fail(ErrorCode::format, "bad magic, expected '" + magic + "'");
  }
}

}  // namespace clusterseq::binary
