// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spade/tensor.hpp"

namespace spade {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to resume training bit-exactly.
///
/// File layout (all integers little-endian):
///   "SPDE"  u32 version(=1)
///   u32 P, then P x { u32 name_len, name, u32 ndim(=4), u32 dims[4], f32 data[prod(dims)] }
///   u32 B, then B x { u32 name_len, name, u32 len, f32 data[len] }          buffers
///   u32 O, then O x { u32 name_len, name, u64 step, u32 K,
///                     K x { u32 len, f32 m[len], u32 len, f32 v[len] } }    optimizers
///   u64 rng_state, u64 trainer_step
///   u32 len, config text (utf-8)
struct CheckpointBundle {
  struct Param {
    std::string name;
    Shape shape;
    std::vector<float> data;
  };
  struct Buffer {
    std::string name;
    std::vector<float> data;
  };
  struct Optimizer {
    std::string name;
    std::uint64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
  };

  std::vector<Param> params;
  std::vector<Buffer> buffers;
  std::vector<Optimizer> optimizers;
  std::uint64_t rng_state = 0;
  std::uint64_t step = 0;
  std::string config_text;
};

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'D', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void floats(const std::vector<float>& v) { raw(v.data(), v.size() * 4); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> b) : b_(std::move(b)) {}

  void raw(void* p, std::size_t n) {
    if (n > b_.size() - pos_) {
      throw CheckpointError("checkpoint truncated: need " + std::to_string(n) + " bytes at offset " +
                            std::to_string(pos_) + ", file has " + std::to_string(b_.size()));
    }
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
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
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::vector<float> floats(std::size_t n) {
    if (n > (b_.size() - pos_) / 4) throw CheckpointError("checkpoint truncated inside a float array at offset " + std::to_string(pos_));
    std::vector<float> v(n);
    raw(v.data(), n * 4);
    return v;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::vector<char> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const CheckpointBundle& c) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& p : c.params) {
    if (p.data.size() != p.shape.numel()) throw CheckpointError("parameter '" + p.name + "' size does not match shape");
    w.str(p.name);
    w.u32(4);
    for (const int d : {p.shape.n, p.shape.c, p.shape.h, p.shape.w}) w.u32(static_cast<std::uint32_t>(d));
    w.floats(p.data);
  }
  w.u32(static_cast<std::uint32_t>(c.buffers.size()));
  for (const auto& b : c.buffers) {
    w.str(b.name);
    w.u32(static_cast<std::uint32_t>(b.data.size()));
    w.floats(b.data);
  }
  w.u32(static_cast<std::uint32_t>(c.optimizers.size()));
  for (const auto& o : c.optimizers) {
    if (o.m.size() != o.v.size()) throw CheckpointError("optimizer '" + o.name + "' has unequal moment lists");
    w.str(o.name);
    w.u64(o.step);
    w.u32(static_cast<std::uint32_t>(o.m.size()));
    for (std::size_t i = 0; i < o.m.size(); ++i) {
      w.u32(static_cast<std::uint32_t>(o.m[i].size()));
      w.floats(o.m[i]);
      w.u32(static_cast<std::uint32_t>(o.v[i].size()));
      w.floats(o.v[i]);
    }
  }
  w.u64(c.rng_state);
  w.u64(c.step);
  w.str(c.config_text);
  return w.bytes();
}

inline CheckpointBundle decode_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint: bad magic bytes");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  CheckpointBundle c;
  const std::uint32_t np = r.u32();
  for (std::uint32_t i = 0; i < np; ++i) {
    CheckpointBundle::Param p;
    p.name = r.str();
    if (r.u32() != 4) throw CheckpointError("parameter '" + p.name + "': expected 4 dimensions");
    p.shape = Shape{static_cast<int>(r.u32()), static_cast<int>(r.u32()), static_cast<int>(r.u32()),
                    static_cast<int>(r.u32())};
    p.data = r.floats(p.shape.numel());
    c.params.push_back(std::move(p));
  }
  const std::uint32_t nb = r.u32();
  for (std::uint32_t i = 0; i < nb; ++i) {
    CheckpointBundle::Buffer b;
    b.name = r.str();
    b.data = r.floats(r.u32());
    c.buffers.push_back(std::move(b));
  }
  const std::uint32_t no = r.u32();
  for (std::uint32_t i = 0; i < no; ++i) {
    CheckpointBundle::Optimizer o;
    o.name = r.str();
    o.step = r.u64();
    const std::uint32_t k = r.u32();
    for (std::uint32_t j = 0; j < k; ++j) {
      o.m.push_back(r.floats(r.u32()));
      o.v.push_back(r.floats(r.u32()));
    }
    c.optimizers.push_back(std::move(o));
  }
  c.rng_state = r.u64();
  c.step = r.u64();
  c.config_text = r.str();
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return c;
}

inline void save_checkpoint(const std::string& path, const CheckpointBundle& c) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

inline CheckpointBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(std::move(bytes));
}

}  // namespace spade
