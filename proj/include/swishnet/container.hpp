// SPDX-License-Identifier: Apache-2.0
//
// Little-endian parameter container shared by network weights ("SWSH") and
// GMM baselines ("SWGM"):
//
//   magic[4] | u32 version | u32 blob_len | blob bytes (config text)
//   u32 n_records | n_records x { u32 name_len | name | u32 rank | u32 dims[rank] | f32 data[] }
#pragma once

#include <swishnet/error.hpp>
#include <swishnet/tensor.hpp>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

namespace swishnet {

inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  std::array<char, 4> magic{};
  std::string config;
  std::vector<std::pair<std::string, Tensor>> records;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : records) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

inline std::vector<unsigned char> encode_container(const Container& c) {
  std::vector<unsigned char> out(c.magic.begin(), c.magic.end());
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  };
  auto bytes = [&](const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  };
  u32(kContainerVersion);
  bytes(c.config);
  u32(static_cast<std::uint32_t>(c.records.size()));
  for (const auto& [name, t] : c.records) {
    bytes(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      u32(raw);
    }
  }
  return out;
}

inline Container decode_container(const std::vector<unsigned char>& in, const char (&expected_magic)[5]) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (in.size() - pos < n) throw FormatError("truncated container");
  };
  auto u32 = [&]() {
    need(4);
    const std::uint32_t v = static_cast<std::uint32_t>(in[pos]) | (static_cast<std::uint32_t>(in[pos + 1]) << 8) |
                            (static_cast<std::uint32_t>(in[pos + 2]) << 16) |
                            (static_cast<std::uint32_t>(in[pos + 3]) << 24);
    pos += 4;
    return v;
  };
  auto str = [&]() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in.begin() + static_cast<std::ptrdiff_t>(pos), in.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  };

  Container c;
  need(4);
  std::memcpy(c.magic.data(), in.data(), 4);
  pos = 4;
  if (std::memcmp(c.magic.data(), expected_magic, 4) != 0) {
    throw FormatError("bad magic '" + std::string(c.magic.begin(), c.magic.end()) + "', expected '" +
                      expected_magic + "'");
  }
  if (const auto v = u32(); v != kContainerVersion) throw FormatError("unsupported version " + std::to_string(v));
  c.config = str();
  const std::uint32_t n_records = u32();
  for (std::uint32_t r = 0; r < n_records; ++r) {
    std::string name = str();
    const std::uint32_t rank = u32();
    if (rank > 8) throw FormatError("implausible rank for record " + name);
    Shape shape(rank);
    for (auto& d : shape) d = u32();
    const std::size_t n = shape_size(shape);
    need(4 * n);
    Tensor t(shape);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t raw = u32();
      float f;
      std::memcpy(&f, &raw, sizeof f);
      t[i] = f;
    }
    c.records.emplace_back(std::move(name), std::move(t));
  }
  if (pos != in.size()) throw FormatError("trailing bytes after container records");
  return c;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// First four bytes of a file, or "" if shorter.
inline std::string peek_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char m[4];
  if (!in.read(m, 4)) return {};
  return std::string(m, 4);
}

}  // namespace swishnet
