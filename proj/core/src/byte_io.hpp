#pragma once

// Little-endian primitives shared by the checkpoint and feature formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "hlstmat/errors.hpp"

namespace hlstmat::detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b, 8);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

/// Tracks the byte offset so format errors can name where they happened.
class ByteReader {
 public:
  ByteReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::uint64_t offset() const { return offset_; }
  const std::string& source() const { return source_; }

  void read(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    const auto got = static_cast<std::uint64_t>(in_.gcount());
    if (got != n) {
      throw FormatError(source_ + ": truncated " + what + " at byte offset " + std::to_string(offset_) +
                        ": expected " + std::to_string(n) + " bytes, got " + std::to_string(got));
    }
    offset_ += n;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    read(reinterpret_cast<char*>(b), 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint64_t u64(const char* what) {
    unsigned char b[8];
    read(reinterpret_cast<char*>(b), 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string bytes(std::size_t n, const char* what) {
    std::string s(n, '\0');
    if (n) read(s.data(), n, what);
    return s;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::string source_;
  std::uint64_t offset_ = 0;
};

}  // namespace hlstmat::detail
