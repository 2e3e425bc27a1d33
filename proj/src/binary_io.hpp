#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace probekit::detail {

inline void put_u32_le(std::uint32_t v, unsigned char* out) {
  out[0] = static_cast<unsigned char>(v);
  out[1] = static_cast<unsigned char>(v >> 8);
  out[2] = static_cast<unsigned char>(v >> 16);
  out[3] = static_cast<unsigned char>(v >> 24);
}

inline std::uint32_t get_u32_le(const unsigned char* in) {
  return static_cast<std::uint32_t>(in[0]) | static_cast<std::uint32_t>(in[1]) << 8 |
         static_cast<std::uint32_t>(in[2]) << 16 | static_cast<std::uint32_t>(in[3]) << 24;
}

inline void put_f32_le(float v, unsigned char* out) { put_u32_le(std::bit_cast<std::uint32_t>(v), out); }
inline float get_f32_le(const unsigned char* in) { return std::bit_cast<float>(get_u32_le(in)); }

inline std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Reads `count` bytes at `offset`; returns false on short read.
inline bool read_at(const std::filesystem::path& p, std::uint64_t offset, std::size_t count,
                    std::vector<unsigned char>& out) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return false;
  in.seekg(static_cast<std::streamoff>(offset));
  out.resize(count);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count));
  return static_cast<std::size_t>(in.gcount()) == count;
}

}  // namespace probekit::detail
