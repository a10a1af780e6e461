#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "sodawide/tensor.hpp"

namespace sodawide {

// SWT1 tensor record:
//   8 bytes  magic "SWTENS1\0"
//   4 x u32  N, C, H, W (little endian)
//   1 byte   dtype tag: 0 = f32, 1 = f64
//   values   little-endian, row-major NCHW

inline constexpr std::array<char, 8> kSwtMagic{'S', 'W', 'T', 'E', 'N', 'S', '1', '\0'};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "SWT1 stores f32 or f64");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

namespace io {

template <class U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  os.write(bytes.data(), bytes.size());
}

template <class U>
U read_le(std::istream& is) {
  static_assert(std::is_unsigned_v<U>);
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw DataError("unexpected end of stream");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void write_f32(std::ostream& os, float v) { write_le(os, std::bit_cast<std::uint32_t>(v)); }
inline void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }
inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_le<std::uint32_t>(is)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_le<std::uint64_t>(is)); }

}  // namespace io

template <class T>
void write_swt1(std::ostream& os, const Tensor<T>& t) {
  os.write(kSwtMagic.data(), kSwtMagic.size());
  const Shape s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) io::write_le(os, static_cast<std::uint32_t>(d));
  os.put(static_cast<char>(dtype_of<T>()));
  for (T v : t.data()) {
    if constexpr (std::is_same_v<T, float>) {
      io::write_f32(os, v);
    } else {
      io::write_f64(os, v);
    }
  }
  if (!os) throw DataError("failed writing SWT1 record");
}

struct SwtHeader {
  Shape shape;
  DType dtype;
};

inline SwtHeader read_swt1_header(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kSwtMagic) throw DataError("bad SWT1 magic");
  SwtHeader h{};
  h.shape.n = io::read_le<std::uint32_t>(is);
  h.shape.c = io::read_le<std::uint32_t>(is);
  h.shape.h = io::read_le<std::uint32_t>(is);
  h.shape.w = io::read_le<std::uint32_t>(is);
  if (!h.shape.valid()) throw DataError("SWT1 record has a zero dimension: " + h.shape.str());
  const int tag = is.get();
  if (tag != 0 && tag != 1) throw DataError("SWT1 unknown dtype tag " + std::to_string(tag));
  h.dtype = static_cast<DType>(tag);
  return h;
}

/// Reads one record, converting to T if the stored dtype differs.
template <class T>
Tensor<T> read_swt1(std::istream& is, DType* stored = nullptr) {
  const SwtHeader h = read_swt1_header(is);
  if (stored) *stored = h.dtype;
  std::vector<T> data(h.shape.numel());
  for (auto& v : data) {
    v = h.dtype == DType::f32 ? static_cast<T>(io::read_f32(is)) : static_cast<T>(io::read_f64(is));
  }
  return Tensor<T>(h.shape, std::move(data));
}

template <class T>
void save_swt1(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_swt1(os, t);
}

template <class T>
Tensor<T> load_swt1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return read_swt1<T>(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace sodawide
