#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "eedvit/config.hpp"
#include "eedvit/errors.hpp"
#include "eedvit/io.hpp"
#include "eedvit/trainer.hpp"

// Checkpoint layout (little-endian):
//
//   8 bytes   magic "EEDVCKPT"
//   u32       version (1)
//   u32+bytes config block: the run's TrainConfig as `key = value` text
//   u64       step counter
//   u64       optimizer steps taken
//   u32       tensor count
//   per tensor:
//     u32+bytes  name ("student/<param>", "teacher/<param>", "adam_m/<param>",
//                "adam_v/<param>", "center")
//     u32        rank (always 2)
//     u32 x rank extents
//     f32 x prod(extents) values, row-major
//   u32       CRC-32 of every preceding byte

namespace eedvit {

inline constexpr std::string_view checkpoint_magic = "EEDVCKPT";
inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
  TrainConfig config;
  DinoState state;
};

namespace detail {

inline void put_matrix(ByteWriter& w, const std::string& name, const MatrixF& m) {
  w.put_string(name);
  w.put(std::uint32_t{2});
  w.put(static_cast<std::uint32_t>(m.rows()));
  w.put(static_cast<std::uint32_t>(m.cols()));
  w.put_array(std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
}

} // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const TrainConfig& cfg, const DinoState& state) {
  ByteWriter w;
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(checkpoint_magic.data()), checkpoint_magic.size()});
  w.put(checkpoint_version);
  w.put_string(to_key_values(cfg).to_text());
  w.put(static_cast<std::uint64_t>(state.step));
  w.put(static_cast<std::uint64_t>(state.optimizer.steps_taken()));
  const std::size_t n = state.student.size();
  const bool with_adam = state.optimizer.first_moment().size() == n;
  w.put(static_cast<std::uint32_t>(2 * n + 1 + (with_adam ? 2 * n : 0)));
  for (std::size_t i = 0; i < n; ++i) {
    detail::put_matrix(w, "student/" + state.student[i].name, state.student[i].value);
  }
  for (std::size_t i = 0; i < n; ++i) {
    detail::put_matrix(w, "teacher/" + state.teacher[i].name, state.teacher[i].value);
  }
  detail::put_matrix(w, "center", state.center);
  if (with_adam) {
    for (std::size_t i = 0; i < n; ++i) {
      detail::put_matrix(w, "adam_m/" + state.student[i].name, state.optimizer.first_moment()[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      detail::put_matrix(w, "adam_v/" + state.student[i].name, state.optimizer.second_moment()[i]);
    }
  }
  w.put(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < checkpoint_magic.size() + 8 ||
      std::string_view(reinterpret_cast<const char*>(bytes.data()), checkpoint_magic.size()) != checkpoint_magic) {
    throw FormatError(origin + ": not a checkpoint (bad magic)");
  }
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(bytes.first(bytes.size() - 4)) != stored_crc) {
    throw ChecksumMismatch(origin + ": CRC-32 mismatch");
  }
  ByteReader r(bytes.first(bytes.size() - 4), origin);
  r.take(checkpoint_magic.size());
  if (const auto v = r.get<std::uint32_t>(); v != checkpoint_version) {
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.config = train_config_from(KeyValues::parse(r.get_string(), origin + " (config block)"));
  const auto step = r.get<std::uint64_t>();
  const auto adam_steps = r.get<std::uint64_t>();

  // Reference layout from the config; every stored tensor must match it.
  ck.state = init_dino_state(ck.config, 0);
  ck.state.step = static_cast<std::size_t>(step);
  ck.state.optimizer.set_steps_taken(static_cast<std::size_t>(adam_steps));
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = r.get_string();
    if (r.get<std::uint32_t>() != 2) {
      throw FormatError(origin + ": tensor '" + name + "' is not rank 2");
    }
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    MatrixF* dst = nullptr;
    const auto slash = name.find('/');
    const std::string group = slash == std::string::npos ? name : name.substr(0, slash);
    const std::string pname = slash == std::string::npos ? "" : name.substr(slash + 1);
    try {
      if (name == "center") {
        dst = &ck.state.center;
      } else if (group == "student") {
        dst = &ck.state.student.at(pname).value;
      } else if (group == "teacher") {
        dst = &ck.state.teacher.at(pname).value;
      } else if (group == "adam_m") {
        dst = &ck.state.optimizer.first_moment()[static_cast<std::size_t>(ck.state.student.index_of(pname))];
      } else if (group == "adam_v") {
        dst = &ck.state.optimizer.second_moment()[static_cast<std::size_t>(ck.state.student.index_of(pname))];
      }
    } catch (const ConfigError&) {
      dst = nullptr;
    }
    if (dst == nullptr) {
      throw FormatError(origin + ": unexpected tensor '" + name + "'");
    }
    if (dst->rows() != static_cast<Eigen::Index>(rows) || dst->cols() != static_cast<Eigen::Index>(cols)) {
      throw FormatError(origin + ": tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", config implies " + std::to_string(dst->rows()) + "x" +
                        std::to_string(dst->cols()));
    }
    r.get_array(std::span<float>(dst->data(), static_cast<std::size_t>(dst->size())));
  }
  if (r.remaining() != 0) {
    throw FormatError(origin + ": trailing bytes after the last tensor");
  }
  if (!ck.state.student.all_finite() || !ck.state.teacher.all_finite() || !ck.state.center.allFinite()) {
    throw FormatError(origin + ": checkpoint contains non-finite values");
  }
  return ck;
}

inline void write_checkpoint(const std::string& path, const TrainConfig& cfg, const DinoState& state) {
  write_file_atomic(path, encode_checkpoint(cfg, state));
}

inline Checkpoint read_checkpoint(const std::string& path) {
  const auto bytes = read_file(path);
  return decode_checkpoint(bytes, path);
}

} // namespace eedvit
