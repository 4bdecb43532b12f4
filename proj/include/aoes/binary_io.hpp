#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "aoes/encoder.hpp"
#include "aoes/error.hpp"

// Little-endian primitives shared by the checkpoint and stats containers.
namespace aoes::binary {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// rows, cols, then column-major values.
inline void put_matrix(std::ostream& out, const Matrix& m) {
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) put_f64(out, m.data()[i]);
}

inline void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw Error(ErrorCode::kBadFormat, "truncated container");
  }
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  read_exact(in, reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

inline std::string get_string(std::istream& in, std::size_t max_len = 1u << 20) {
  const auto n = get_u32(in);
  if (n > max_len) throw Error(ErrorCode::kBadFormat, "string too long");
  std::string s(n, '\0');
  read_exact(in, s.data(), n);
  return s;
}

inline Matrix get_matrix(std::istream& in, std::uint64_t max_elems = 1ull << 28) {
  const auto rows = get_u64(in);
  const auto cols = get_u64(in);
  if (rows != 0 && cols > max_elems / rows) throw Error(ErrorCode::kBadFormat, "tensor too large");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f64(in);
  return m;
}

inline void expect_magic(std::istream& in, const char (&magic)[9]) {
  char got[8];
  read_exact(in, got, 8);
  if (std::memcmp(got, magic, 8) != 0) throw Error(ErrorCode::kBadFormat, "bad magic");
}

}  // namespace aoes::binary
