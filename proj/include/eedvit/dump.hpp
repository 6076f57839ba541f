#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "eedvit/errors.hpp"
#include "eedvit/io.hpp"
#include "eedvit/vit.hpp"

// Activation dump layout (all integers little-endian):
//
//   offset  size  field
//   0       5     magic "EEDV1"
//   5       4     u32 version (1)
//   9       8     u64 model config hash
//   17      4     u32 layer count
//   21      8     u64 token rows per layer (images * tokens_per_image)
//   29      4     u32 tokens per image
//   33      4     u32 D
//   37            (header end)
//   then per layer:
//           4     u32 layer index
//           rows * D * 4   f32 values, row-major
//   last    4     u32 CRC-32 (zlib polynomial) of every preceding byte

namespace eedvit {

inline constexpr std::string_view dump_magic = "EEDV1";
inline constexpr std::uint32_t dump_version = 1;

struct ActivationDump {
  std::uint64_t config_hash = 0;
  std::size_t tokens_per_image = 0;
  std::vector<LayerActivations<float>> layers;
};

inline std::vector<std::uint8_t> encode_dump(const ActivationDump& dump) {
  if (dump.layers.empty()) {
    throw DegenerateInput("activation dump needs at least one layer");
  }
  const auto rows = dump.layers.front().tokens.rows();
  const auto dim = dump.layers.front().tokens.cols();
  for (const auto& l : dump.layers) {
    if (l.tokens.rows() != rows || l.tokens.cols() != dim) {
      throw ShapeMismatch("activation dump layers differ in shape");
    }
  }
  ByteWriter w;
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(dump_magic.data()), dump_magic.size()});
  w.put(dump_version);
  w.put(dump.config_hash);
  w.put(static_cast<std::uint32_t>(dump.layers.size()));
  w.put(static_cast<std::uint64_t>(rows));
  w.put(static_cast<std::uint32_t>(dump.tokens_per_image));
  w.put(static_cast<std::uint32_t>(dim));
  for (const auto& l : dump.layers) {
    w.put(static_cast<std::uint32_t>(l.layer_index));
    w.put_array(std::span<const float>(l.tokens.data(), static_cast<std::size_t>(l.tokens.size())));
  }
  w.put(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

inline ActivationDump decode_dump(std::span<const std::uint8_t> bytes, const std::string& origin) {
  constexpr std::size_t header_size = 37;
  if (bytes.size() < header_size + 4) {
    throw FormatError(origin + ": too short for an activation dump");
  }
  if (std::string_view(reinterpret_cast<const char*>(bytes.data()), dump_magic.size()) != dump_magic) {
    throw FormatError(origin + ": bad magic (not an EEDV1 activation dump)");
  }
  ByteReader r(bytes, origin);
  r.take(dump_magic.size());
  const auto version = r.get<std::uint32_t>();
  if (version != dump_version) {
    throw FormatError(origin + ": unsupported dump version " + std::to_string(version));
  }
  ActivationDump dump;
  dump.config_hash = r.get<std::uint64_t>();
  const auto layers = r.get<std::uint32_t>();
  const auto rows = r.get<std::uint64_t>();
  dump.tokens_per_image = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint32_t>();
  if (layers == 0 || rows == 0 || dim == 0) {
    throw FormatError(origin + ": header declares an empty dump");
  }
  const std::size_t block = static_cast<std::size_t>(rows) * dim * sizeof(float);
  if (rows > (1ull << 40) || block / sizeof(float) / dim != rows ||
      bytes.size() != header_size + layers * (4 + block) + 4) {
    throw FormatError(origin + ": header (layers=" + std::to_string(layers) + ", rows=" + std::to_string(rows) +
                      ", D=" + std::to_string(dim) + ") does not match the file size " +
                      std::to_string(bytes.size()));
  }
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(bytes.first(bytes.size() - 4)) != stored_crc) {
    throw ChecksumMismatch(origin + ": CRC-32 mismatch");
  }
  if (dump.tokens_per_image == 0 || rows % dump.tokens_per_image != 0) {
    throw FormatError(origin + ": token rows are not a multiple of tokens per image");
  }
  for (std::uint32_t i = 0; i < layers; ++i) {
    LayerActivations<float> l;
    l.layer_index = r.get<std::uint32_t>();
    l.tokens_per_image = dump.tokens_per_image;
    l.tokens.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
    r.get_array(std::span<float>(l.tokens.data(), static_cast<std::size_t>(l.tokens.size())));
    dump.layers.push_back(std::move(l));
  }
  return dump;
}

inline void write_dump(const std::string& path, const ActivationDump& dump) {
  write_file_atomic(path, encode_dump(dump));
}

inline ActivationDump read_dump(const std::string& path) {
  const auto bytes = read_file(path);
  return decode_dump(bytes, path);
}

} // namespace eedvit
