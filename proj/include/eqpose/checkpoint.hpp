#pragma once

// Binary checkpoint format (all integers little-endian):
//   "EQPS" | u32 version | u32 count | count x record
//   record = u32 name_len | name bytes (UTF-8) | u32 rank | rank x u32 dim |
//            prod(dims) x f32

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "eqpose/errors.hpp"

namespace eqpose {

inline constexpr char kCheckpointMagic[4] = {'E', 'Q', 'P', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  bool operator==(const CheckpointRecord&) const = default;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff),
                     static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("checkpoint truncated while reading " + what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os,
                             const std::vector<CheckpointRecord>& records) {
  os.write(kCheckpointMagic, 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    std::size_t n = 1;
    for (auto d : r.dims) n *= d;
    if (n != r.data.size())
      throw ContractViolation("checkpoint record '" + r.name +
                              "' has inconsistent dims");
    detail::put_u32(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) detail::put_u32(os, d);
    for (float f : r.data) detail::put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
}

inline std::vector<CheckpointRecord> read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("not a checkpoint: bad magic bytes");
  const std::uint32_t version = detail::get_u32(is, "version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  const std::uint32_t count = detail::get_u32(is, "record count");
  std::vector<CheckpointRecord> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointRecord r;
    const std::uint32_t len = detail::get_u32(is, "name length");
    r.name.resize(len);
    if (!is.read(r.name.data(), len))
      throw FormatError("checkpoint truncated while reading a name");
    const std::uint32_t rank = detail::get_u32(is, "rank of '" + r.name + "'");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      r.dims.push_back(detail::get_u32(is, "dims of '" + r.name + "'"));
      n *= r.dims.back();
    }
    r.data.resize(n);
    const std::string what = "payload of '" + r.name + "'";
    for (std::size_t i = 0; i < n; ++i)
      r.data[i] = std::bit_cast<float>(detail::get_u32(is, what));
    out.push_back(std::move(r));
  }
  return out;
}

inline void save_checkpoint(const std::string& path,
                            const std::vector<CheckpointRecord>& records) {
  std::ostringstream buf(std::ios::binary);
  write_checkpoint(buf, records);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + tmp);
    const std::string bytes = buf.str();
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError("failed writing checkpoint: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("cannot move checkpoint into place: " + path);
}

inline std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

}  // namespace eqpose
