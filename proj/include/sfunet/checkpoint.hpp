#pragma once

// Binary checkpoint: "WDCK", u32 version, u64 json length + config JSON,
// four named-tensor sections (params, ema, adam_m, adam_v), RNG state blob,
// trailing CRC32 (IEEE) of every preceding byte. All integers and f32
// payloads little-endian. Loads refuse files whose CRC does not match.

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "sfunet/image.hpp"  // byte helpers, atomic_write, read_file
#include "sfunet/tensor.hpp"

namespace sfunet {

inline uint32_t crc32_bytes(const uint8_t* data, size_t n) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

struct Checkpoint {
  std::string config_json;
  NamedTensors params, ema, adam_m, adam_v;
  std::string rng_state;
};

namespace detail {

inline void put_section(std::string& buf, const NamedTensors& ts) {
  put_u64(buf, ts.size());
  for (const auto& [name, t] : ts) {
    put_u32(buf, static_cast<uint32_t>(name.size()));
    buf.append(name);
    buf.push_back(0);  // dtype tag: f32
    put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) put_u32(buf, static_cast<uint32_t>(d));
    const size_t off = buf.size();
    buf.resize(off + t.data().size() * 4);
    std::memcpy(buf.data() + off, t.data().data(), t.data().size() * 4);
  }
}

struct Reader {
  const uint8_t* p;
  size_t n, pos = 0;
  void need(size_t k, const char* what) {
    if (pos + k > n) fail(std::string("checkpoint truncated reading ") + what);
  }
  uint32_t u32(const char* what) { need(4, what); uint32_t v = get_u32(p + pos); pos += 4; return v; }
  uint64_t u64(const char* what) { need(8, what); uint64_t v = get_u64(p + pos); pos += 8; return v; }
  std::string bytes(size_t k, const char* what) {
    need(k, what);
    std::string s(reinterpret_cast<const char*>(p + pos), k);
    pos += k;
    return s;
  }
};

inline NamedTensors get_section(Reader& r) {
  NamedTensors ts;
  const uint64_t count = r.u64("tensor count");
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32("name length");
    std::string name = r.bytes(name_len, "name");
    const std::string dtype = r.bytes(1, "dtype");
    if (dtype[0] != 0) fail("checkpoint: unsupported dtype tag for " + name);
    const uint32_t rank = r.u32("rank");
    if (rank > 8) fail("checkpoint: implausible rank for " + name);
    Shape shape;
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32("dim"));
      numel *= shape.back();
    }
    std::vector<float> data(static_cast<size_t>(numel));
    r.need(data.size() * 4, "payload");
    std::memcpy(data.data(), r.p + r.pos, data.size() * 4);
    r.pos += data.size() * 4;
    ts.emplace_back(std::move(name), Tensor<float>::from(std::move(data), shape));
  }
  return ts;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string buf = "WDCK";
  detail::put_u32(buf, 1);  // format version
  detail::put_u64(buf, ckpt.config_json.size());
  buf.append(ckpt.config_json);
  detail::put_section(buf, ckpt.params);
  detail::put_section(buf, ckpt.ema);
  detail::put_section(buf, ckpt.adam_m);
  detail::put_section(buf, ckpt.adam_v);
  detail::put_u64(buf, ckpt.rng_state.size());
  buf.append(ckpt.rng_state);
  const uint32_t crc = crc32_bytes(reinterpret_cast<const uint8_t*>(buf.data()), buf.size());
  detail::put_u32(buf, crc);
  detail::atomic_write(path, buf);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 12 || bytes.compare(0, 4, "WDCK") != 0)
    fail(path + ": not a checkpoint file");
  const uint8_t* p = reinterpret_cast<const uint8_t*>(bytes.data());
  const uint32_t stored_crc = detail::get_u32(p + bytes.size() - 4);
  const uint32_t actual_crc = crc32_bytes(p, bytes.size() - 4);
  if (stored_crc != actual_crc)
    fail(path + ": CRC mismatch (file corrupt), refusing to load");
  detail::Reader r{p + 4, bytes.size() - 8};  // skip magic, exclude crc
  const uint32_t version = r.u32("version");
  if (version != 1) fail(path + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const uint64_t json_len = r.u64("config length");
  ckpt.config_json = r.bytes(json_len, "config");
  ckpt.params = detail::get_section(r);
  ckpt.ema = detail::get_section(r);
  ckpt.adam_m = detail::get_section(r);
  ckpt.adam_v = detail::get_section(r);
  const uint64_t rng_len = r.u64("rng length");
  ckpt.rng_state = r.bytes(rng_len, "rng state");
  if (r.pos != r.n) fail(path + ": trailing bytes after checkpoint payload");
  return ckpt;
}

}  // namespace sfunet
