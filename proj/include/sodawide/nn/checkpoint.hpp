#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>
#include <string>

#include <zlib.h>

#include "sodawide/nn/network.hpp"
#include "sodawide/serialize.hpp"

namespace sodawide::nn {

// Checkpoint container:
//   8 bytes  magic "SWCKPT1\0"
//   u32      length of the config JSON, then the JSON bytes
//   u32      record count, then per record: u32 path length, path bytes, SWT1 record
//   u32      CRC32 of every preceding byte

inline constexpr std::array<char, 8> kCheckpointMagic{'S', 'W', 'C', 'K', 'P', 'T', '1', '\0'};

inline std::uint32_t crc32_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

template <class T>
std::string encode_checkpoint(const SodaWideNet<T>& net) {
  std::ostringstream os(std::ios::binary);
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  const std::string config = nlohmann::json(net.config()).dump();
  io::write_le(os, static_cast<std::uint32_t>(config.size()));
  os.write(config.data(), static_cast<std::streamsize>(config.size()));
  const auto& entries = net.params().entries();
  io::write_le(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    io::write_le(os, static_cast<std::uint32_t>(e.path.size()));
    os.write(e.path.data(), static_cast<std::streamsize>(e.path.size()));
    write_swt1(os, e.var.value());
  }
  std::string bytes = os.str();
  std::ostringstream tail(std::ios::binary);
  io::write_le(tail, crc32_of(bytes));
  return bytes + tail.str();
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const SodaWideNet<T>& net) {
  const std::string bytes = encode_checkpoint(net);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

namespace detail {

inline std::string read_bytes(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("unexpected end of checkpoint");
  return s;
}

}  // namespace detail

/// Decodes a checkpoint, rebuilding the network from its stored config.
template <class T>
std::unique_ptr<SodaWideNet<T>> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 12) throw DataError("checkpoint too short");
  const std::string body = bytes.substr(0, bytes.size() - 4);
  std::istringstream crc_in(bytes.substr(bytes.size() - 4), std::ios::binary);
  if (io::read_le<std::uint32_t>(crc_in) != crc32_of(body)) throw DataError("checkpoint CRC32 mismatch");

  std::istringstream is(body, std::ios::binary);
  if (detail::read_bytes(is, kCheckpointMagic.size()) != std::string(kCheckpointMagic.data(), 8)) {
    throw DataError("bad checkpoint magic");
  }
  const auto config_len = io::read_le<std::uint32_t>(is);
  NetworkConfig config;
  try {
    from_json(nlohmann::json::parse(detail::read_bytes(is, config_len)), config);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  auto net = std::make_unique<SodaWideNet<T>>(config, 0);
  const auto count = io::read_le<std::uint32_t>(is);
  if (count != net->params().entries().size()) {
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, network has " +
                    std::to_string(net->params().entries().size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string path = detail::read_bytes(is, io::read_le<std::uint32_t>(is));
    const auto* entry = net->params().find(path);
    if (!entry) throw DataError("checkpoint tensor '" + path + "' has no matching parameter");
    Tensor<T> value = read_swt1<T>(is);
    if (value.shape() != entry->var.shape()) {
      throw DataError("checkpoint tensor '" + path + "' has shape " + value.shape().str() + ", expected " +
                      entry->var.shape().str());
    }
    Var<T> v = entry->var;
    v.set_value(std::move(value));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in checkpoint");
  return net;
}

template <class T>
std::unique_ptr<SodaWideNet<T>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint<T>(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace sodawide::nn
