// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "melmark/config.hpp"
#include "melmark/errors.hpp"
#include "melmark/grid.hpp"

namespace melmark {

// ---- MMK1 checkpoint container ----
//
// Little-endian layout:
//   "MMK1"            4 bytes
//   version           u32 (currently 1)
//   step              u64
//   arch_hash         u64 (0 = unspecified; resume refuses a mismatch)
//   config_len        u32, then config text (serialized RunConfig)
//   n_tensors         u32
//   per tensor: name_len u32, name bytes, ndim u32, dims u32[ndim],
//               f32 data (product(dims) values)
//
// Loads validate magic, version, and that every tensor's data fits the file;
// save/load round trips are bit-identical.

constexpr uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<uint32_t> shape;
  std::vector<float> data;

  size_t count() const {
    size_t n = 1;
    for (uint32_t d : shape) n *= d;
    return n;
  }
};

struct Checkpoint {
  uint64_t step = 0;
  uint64_t arch_hash = 0;
  RunConfig config;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    for (const TensorRecord& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const TensorRecord& get(const std::string& name) const {
    const TensorRecord* t = find(name);
    require(t != nullptr, Errc::format, "checkpoint: missing tensor: " + name);
    return *t;
  }

  void add(const std::string& name, std::vector<uint32_t> shape, std::vector<float> data) {
    TensorRecord t{name, std::move(shape), std::move(data)};
    require(t.count() == t.data.size(), Errc::size,
            "checkpoint: tensor data does not match its shape: " + name);
    require(find(name) == nullptr, Errc::parameter, "checkpoint: duplicate tensor: " + name);
    tensors.push_back(std::move(t));
  }

  void add_grid(const std::string& name, const Grid& g) {
    std::vector<float> data(g.size());
    for (size_t i = 0; i < g.size(); ++i) data[i] = static_cast<float>(g.v[i]);
    add(name, {static_cast<uint32_t>(g.h), static_cast<uint32_t>(g.w)}, std::move(data));
  }

  Grid get_grid(const std::string& name) const {
    const TensorRecord& t = get(name);
    require(t.shape.size() == 2, Errc::format, "checkpoint: tensor is not 2-d: " + name);
    Grid g(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
    for (size_t i = 0; i < t.data.size(); ++i) g.v[i] = t.data[i];
    return g;
  }
};

namespace detail {

inline void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Bounds-checked cursor over the loaded bytes; errors carry the offset so a
// truncated or corrupted file points at where it went wrong.
struct ByteReader {
  const uint8_t* p;
  size_t len;
  size_t off = 0;
  std::string path;

  void need(size_t n, const char* what) {
    require(off + n <= len, Errc::format,
            std::string("checkpoint: truncated ") + what + " at offset " +
                std::to_string(off) + " in " + path);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p + off), n);
    off += n;
    return s;
  }
};

}  // namespace detail

inline std::string checkpoint_to_bytes(const Checkpoint& c) {
  std::string b;
  b += "MMK1";
  detail::put_u32(b, kCheckpointVersion);
  detail::put_u64(b, c.step);
  detail::put_u64(b, c.arch_hash);
  const std::string cfg = serialize_config(c.config);
  detail::put_u32(b, static_cast<uint32_t>(cfg.size()));
  b += cfg;
  detail::put_u32(b, static_cast<uint32_t>(c.tensors.size()));
  for (const TensorRecord& t : c.tensors) {
    require(t.count() == t.data.size(), Errc::size,
            "checkpoint: tensor data does not match its shape: " + t.name);
    detail::put_u32(b, static_cast<uint32_t>(t.name.size()));
    b += t.name;
    detail::put_u32(b, static_cast<uint32_t>(t.shape.size()));
    for (uint32_t d : t.shape) detail::put_u32(b, d);
    const size_t bytes = t.data.size() * sizeof(float);
    const size_t at = b.size();
    b.resize(at + bytes);
    static_assert(sizeof(float) == 4);
    std::memcpy(b.data() + at, t.data.data(), bytes);  // f32 LE on every target we build
  }
  return b;
}

inline Checkpoint checkpoint_from_bytes(const std::string& bytes, const std::string& path) {
  detail::ByteReader r{reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size(), 0, path};
  r.need(4, "magic");
  require(std::memcmp(r.p, "MMK1", 4) == 0, Errc::format,
          "checkpoint: bad magic at offset 0 in " + path);
  r.off = 4;
  const uint32_t version = r.u32("version");
  require(version == kCheckpointVersion, Errc::unsupported,
          "checkpoint: unsupported version " + std::to_string(version) + " in " + path);
  Checkpoint c;
  c.step = r.u64("step");
  c.arch_hash = r.u64("arch hash");
  const uint32_t cfg_len = r.u32("config length");
  c.config = parse_config(r.bytes(cfg_len, "config text"));
  const uint32_t n = r.u32("tensor count");
  for (uint32_t i = 0; i < n; ++i) {
    TensorRecord t;
    const uint32_t name_len = r.u32("tensor name length");
    t.name = r.bytes(name_len, "tensor name");
    const uint32_t ndim = r.u32("tensor rank");
    require(ndim <= 8, Errc::format,
            "checkpoint: implausible tensor rank at offset " + std::to_string(r.off) +
                " in " + path);
    uint64_t count = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(r.u32("tensor dimension"));
      count *= t.shape.back();
    }
    r.need(count * sizeof(float), "tensor data");
    t.data.resize(count);
    std::memcpy(t.data.data(), r.p + r.off, count * sizeof(float));
    r.off += count * sizeof(float);
    c.tensors.push_back(std::move(t));
  }
  require(r.off == r.len, Errc::format,
          "checkpoint: " + std::to_string(r.len - r.off) + " trailing bytes at offset " +
              std::to_string(r.off) + " in " + path);
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const std::string bytes = checkpoint_to_bytes(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), Errc::io, "checkpoint: cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  require(f.good(), Errc::io, "checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require(!f.bad(), Errc::io, "checkpoint: read failed: " + path);
  return checkpoint_from_bytes(bytes, path);
}

}  // namespace melmark
