#ifndef FLIP_SRC_BINARY_IO_HPP_
#define FLIP_SRC_BINARY_IO_HPP_

// Little-endian primitives shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "flip/errors.hpp"

namespace flip::io {

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("truncated file while reading " + what);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void read_exact(std::istream& in, void* dst, std::size_t n, const std::string& what) {
  if (!in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) {
    throw IoError("truncated file while reading " + what);
  }
}

}  // namespace flip::io

#endif  // FLIP_SRC_BINARY_IO_HPP_
