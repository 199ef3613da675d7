#pragma once

#include "vqtok/tape.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace vqtok {

static_assert(std::endian::native == std::endian::little,
              "serialized formats are little-endian; big-endian hosts need byte swaps");

/// Raised on malformed or truncated files; loading never leaves partial state.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace serial {

template <typename T>
void write_pod(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw LoadError(std::string("truncated read: ") + what);
  return v;
}

inline void write_magic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char magic[4], const char* what) {
  char buf[4] = {};
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0)
    throw LoadError(std::string("bad magic for ") + what);
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<uint16_t>(out, static_cast<uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what) {
  uint16_t len = read_pod<uint16_t>(in, what);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw LoadError(std::string("truncated string: ") + what);
  return s;
}

inline void write_mat(std::ostream& out, const Mat& m) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(m.rows()));
  write_pod<uint32_t>(out, static_cast<uint32_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * m.size()));
}

inline Mat read_mat(std::istream& in, const char* what) {
  uint32_t rows = read_pod<uint32_t>(in, what);
  uint32_t cols = read_pod<uint32_t>(in, what);
  Mat m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(float) * m.size()));
  if (!in) throw LoadError(std::string("truncated matrix: ") + what);
  return m;
}

}  // namespace serial
}  // namespace vqtok
