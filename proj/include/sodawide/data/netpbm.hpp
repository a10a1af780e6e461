#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sodawide/tensor.hpp"

namespace sodawide::data {

/// Decoded binary PGM (P5) or PPM (P6). Samples are interleaved, row-major.
struct PnmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 for P5, 3 for P6
  std::uint32_t maxval = 255;
  std::vector<std::uint16_t> samples;
};

namespace detail {

inline void skip_space_and_comments(std::istream& is) {
  for (;;) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (c != EOF && std::isspace(c)) {
      is.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_header_number(std::istream& is, const char* field) {
  skip_space_and_comments(is);
  std::size_t v = 0;
  bool any = false;
  while (std::isdigit(is.peek())) {
    v = v * 10 + static_cast<std::size_t>(is.get() - '0');
    any = true;
    if (v > 1u << 30) throw DataError(std::string("netpbm ") + field + " too large");
  }
  if (!any) throw DataError(std::string("netpbm header: missing ") + field);
  return v;
}

}  // namespace detail

inline PnmImage read_pnm(std::istream& is) {
  char magic[2] = {};
  if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw DataError("not a binary PGM (P5) or PPM (P6) file");
  }
  PnmImage img;
  img.channels = magic[1] == '5' ? 1 : 3;
  img.width = detail::read_header_number(is, "width");
  img.height = detail::read_header_number(is, "height");
  const std::size_t maxval = detail::read_header_number(is, "maxval");
  if (img.width == 0 || img.height == 0) throw DataError("netpbm image has a zero dimension");
  if (maxval == 0 || maxval > 65535) throw DataError("netpbm maxval must be in 1..65535");
  img.maxval = static_cast<std::uint32_t>(maxval);
  if (!std::isspace(is.get())) throw DataError("netpbm header must end in one whitespace byte");

  const std::size_t count = img.width * img.height * img.channels;
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(count * bytes_per);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw DataError("netpbm pixel data truncated");
  }
  img.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    // 16-bit samples are big endian
    img.samples[i] = bytes_per == 1 ? raw[i] : static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    if (img.samples[i] > maxval) throw DataError("netpbm sample exceeds maxval");
  }
  return img;
}

inline PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return read_pnm(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_pnm(std::ostream& os, const PnmImage& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("netpbm images have 1 or 3 channels");
  if (img.samples.size() != img.width * img.height * img.channels) throw DataError("netpbm sample count mismatch");
  os << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << '\n' << img.maxval << '\n';
  for (std::uint16_t v : img.samples) {
    if (img.maxval >= 256) os.put(static_cast<char>(v >> 8));
    os.put(static_cast<char>(v & 0xFF));
  }
  if (!os) throw DataError("failed writing netpbm data");
}

inline void write_pnm(const std::filesystem::path& path, const PnmImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_pnm(os, img);
}

/// 1 x channels x H x W tensor with samples scaled to [0, 1] by maxval.
template <class T>
Tensor<T> to_tensor(const PnmImage& img) {
  Tensor<T> t(Shape{1, img.channels, img.height, img.width});
  const std::size_t plane = img.width * img.height;
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < img.channels; ++c) {
      t[c * plane + p] = static_cast<T>(static_cast<double>(img.samples[p * img.channels + c]) / img.maxval);
    }
  return t;
}

/// 8-bit image of a 1 x {1,3} x H x W tensor: round(255 * clamp(v, 0, 1)).
template <class T>
PnmImage to_pnm8(const Tensor<T>& t) {
  const Shape s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) throw ShapeError("netpbm export needs a 1x1xHxW or 1x3xHxW tensor, got " + s.str());
  PnmImage img;
  img.width = s.w;
  img.height = s.h;
  img.channels = s.c;
  img.samples.resize(t.numel());
  const std::size_t plane = s.plane();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < s.c; ++c) {
      double v = static_cast<double>(t[c * plane + p]);
      v = v >= 0.0 ? std::min(v, 1.0) : 0.0;  // NaN maps to 0
      img.samples[p * s.c + c] = static_cast<std::uint16_t>(std::lround(255.0 * v));
    }
  return img;
}

}  // namespace sodawide::data
