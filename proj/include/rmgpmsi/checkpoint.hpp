#pragma once

// Single-file training snapshot:
//   magic "RMGPMSI\n", u32 version, sections, u64 FNV-1a checksum of all
//   preceding bytes. Integers are little-endian; tensors are stored by name
//   with their shape and raw element bytes.

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rmgpmsi/error.hpp"
#include "rmgpmsi/nn/layers.hpp"
#include "rmgpmsi/tensor.hpp"

namespace rmgpmsi::checkpoint {

inline constexpr std::string_view kMagic = "RMGPMSI\n";
inline constexpr std::uint32_t kVersion = 1;

struct Blob {
  std::array<std::uint64_t, 4> shape{};
  std::uint32_t element_size = 0;
  std::vector<std::uint8_t> bytes;
  friend bool operator==(const Blob&, const Blob&) = default;
};

struct Checkpoint {
  std::string config;  // key = value echo
  std::uint64_t epoch = 0;
  std::string rng_state;
  std::uint64_t optimizer_steps = 0;
  std::map<std::string, Blob> params;
  std::map<std::string, Blob> buffers;
  std::map<std::string, Blob> velocities;
  std::string metrics_csv;
};

inline std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) h = (h ^ data[i]) * 0x100000001b3ULL;
  return h;
}

template <typename T>
Blob to_blob(const Tensor<T>& t) {
  Blob b;
  for (std::size_t i = 0; i < 4; ++i) b.shape[i] = t.shape()[i];
  b.element_size = sizeof(T);
  b.bytes.resize(t.size() * sizeof(T));
  if (t.size()) std::memcpy(b.bytes.data(), t.data(), b.bytes.size());
  return b;
}

template <typename T>
void from_blob(const Blob& b, Tensor<T>& t, const std::string& name) {
  require(b.element_size == sizeof(T), ErrorKind::ResumeMismatch,
          name + ": stored with " + std::to_string(b.element_size * 8) + "-bit values");
  for (std::size_t i = 0; i < 4; ++i)
    require(b.shape[i] == t.shape()[i], ErrorKind::ResumeMismatch, name + ": stored shape differs from model");
  if (t.size()) std::memcpy(t.data(), b.bytes.data(), b.bytes.size());
}

namespace detail {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void blobs(const std::map<std::string, Blob>& m) {
    u64(m.size());
    for (const auto& [name, b] : m) {
      str(name);
      for (auto d : b.shape) u64(d);
      u32(b.element_size);
      u64(b.bytes.size());
      raw(b.bytes.data(), b.bytes.size());
    }
  }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), c, c + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const auto n = u64();
    check(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::map<std::string, Blob> blobs() {
    std::map<std::string, Blob> m;
    const auto count = u64();
    for (std::uint64_t i = 0; i < count; ++i) {
      auto name = str();
      Blob b;
      for (auto& d : b.shape) d = u64();
      b.element_size = u32();
      const auto n = u64();
      check(n);
      b.bytes.assign(data_ + pos_, data_ + pos_ + n);
      pos_ += n;
      if (b.shape[0] * b.shape[1] * b.shape[2] * b.shape[3] * b.element_size != n)
        fail(ErrorKind::CorruptCheckpoint, "tensor " + name + " has inconsistent size");
      m.emplace(std::move(name), std::move(b));
    }
    return m;
  }
  void raw(void* p, std::size_t n) {
    check(n);
    std::memcpy(p, data_ + pos_, n);
    pos_ += n;
  }
  std::size_t position() const noexcept { return pos_; }

 private:
  void check(std::uint64_t n) const {
    if (n > size_ - pos_) fail(ErrorKind::CorruptCheckpoint, "checkpoint is truncated");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Checkpoint& c) {
  detail::Writer w;
  w.raw(kMagic.data(), kMagic.size());
  w.u32(kVersion);
  w.str(c.config);
  w.u64(c.epoch);
  w.str(c.rng_state);
  w.u64(c.optimizer_steps);
  w.blobs(c.params);
  w.blobs(c.buffers);
  w.blobs(c.velocities);
  w.str(c.metrics_csv);
  w.u64(fnv1a(w.out.data(), w.out.size()));
  return std::move(w.out);
}

inline Checkpoint decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagic.size() + 4 + 8 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    fail(ErrorKind::CorruptCheckpoint, "not a checkpoint file (bad magic)");
  detail::Reader r(bytes.data() + kMagic.size(), bytes.size() - kMagic.size());
  const auto version = r.u32();
  if (version != kVersion)
    fail(ErrorKind::VersionMismatch,
         "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kVersion));
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (fnv1a(bytes.data(), body) != stored) fail(ErrorKind::CorruptCheckpoint, "checksum mismatch");
  detail::Reader payload(bytes.data() + kMagic.size() + 4, body - kMagic.size() - 4);
  Checkpoint c;
  c.config = payload.str();
  c.epoch = payload.u64();
  c.rng_state = payload.str();
  c.optimizer_steps = payload.u64();
  c.params = payload.blobs();
  c.buffers = payload.blobs();
  c.velocities = payload.blobs();
  c.metrics_csv = payload.str();
  if (payload.position() != body - kMagic.size() - 4) fail(ErrorKind::CorruptCheckpoint, "trailing bytes");
  return c;
}

inline void save(const std::string& path, const Checkpoint& c) {
  const auto bytes = encode(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::IoError, "short write to " + path);
}

inline Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace rmgpmsi::checkpoint
