// Checkpoint file: "LEAPDCK1" magic, u32 format version, u32 entry count,
// then per entry a u32 name length, the name bytes, u32 ndim, u64 dims,
// and the values as 64-bit little-endian floats. Assumes a little-endian
// host, which covers every platform this builds on.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "leapd/tensor.hpp"

namespace leapd {

inline constexpr char kCheckpointMagic[8] = {'L', 'E', 'A', 'P', 'D', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_checkpoint(const std::string& path, const NamedTensors& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 8);
  auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  put_u32(kCheckpointVersion);
  put_u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put_u32(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape) put_u64(d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failure on checkpoint " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error(path + " is not a checkpoint file");
  auto get_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto get_u64 = [&]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  std::uint32_t version = get_u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t count = get_u32();
  NamedTensors entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = get_u32();
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t ndim = get_u32();
    std::vector<std::size_t> shape(ndim);
    std::size_t total = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(get_u64());
      total *= d;
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data.resize(total);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(total * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint " + path);
    entries.emplace_back(std::move(name), std::move(t));
  }
  return entries;
}

inline bool is_detector_key(const std::string& name) {
  return name.rfind("detector.", 0) == 0;
}

// Drops everything but detector parameters, keeping inference self-contained.
inline void strip_domain_modules(const std::string& in_path, const std::string& out_path) {
  NamedTensors entries = load_checkpoint(in_path);
  NamedTensors kept;
  for (auto& e : entries)
    if (is_detector_key(e.first)) kept.push_back(std::move(e));
  if (kept.empty())
    throw std::runtime_error("checkpoint " + in_path + " has no detector parameters");
  save_checkpoint(out_path, kept);
}

inline bool has_domain_modules(const NamedTensors& entries) {
  for (const auto& [name, t] : entries)
    if (!is_detector_key(name)) return true;
  return false;
}

}  // namespace leapd
