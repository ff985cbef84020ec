#pragma once

// PPM (P6, 8-bit) codec, the raw little-endian tensor file, and pixel
// normalization. File writes go through a temp file + rename.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sfunet/tensor.hpp"

namespace sfunet {

struct ImageU8 {
  int64_t width = 0, height = 0;
  std::vector<uint8_t> rgb;  // interleaved, row-major
};

namespace detail {

inline void skip_ppm_space(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      in.get();
    } else {
      return;
    }
  }
}

inline void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot open for write: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail("rename failed: " + path);
}

inline void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace detail

inline ImageU8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") fail(path + ": not a P6 PPM file");
  detail::skip_ppm_space(in);
  int64_t w = 0, h = 0, maxval = 0;
  in >> w;
  detail::skip_ppm_space(in);
  in >> h;
  detail::skip_ppm_space(in);
  in >> maxval;
  if (!in || w <= 0 || h <= 0) fail(path + ": malformed PPM header");
  if (maxval != 255) fail(path + ": only 8-bit PPM supported (maxval 255)");
  in.get();  // single whitespace after maxval
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<size_t>(3 * w * h));
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
    fail(path + ": truncated pixel data");
  return img;
}

inline void write_ppm(const std::string& path, const ImageU8& img) {
  std::string buf = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  buf.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  detail::atomic_write(path, buf);
}

// pixel [0,255] -> [-1,1] via x/127.5 - 1
inline Tensor<float> image_to_tensor(const ImageU8& img) {
  Tensor<float> t = Tensor<float>::zeros({3, img.height, img.width});
  const int64_t hw = img.height * img.width;
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t c = 0; c < 3; ++c)
      t.data()[static_cast<size_t>(c * hw + i)] =
          static_cast<float>(img.rgb[static_cast<size_t>(3 * i + c)]) / 127.5f - 1.0f;
  return t;
}

inline ImageU8 tensor_to_image(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) fail("tensor_to_image: expected [3,H,W]");
  ImageU8 img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  const int64_t hw = img.height * img.width;
  img.rgb.resize(static_cast<size_t>(3 * hw));
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      float v = (t.data()[static_cast<size_t>(c * hw + i)] + 1.0f) * 127.5f;
      v = std::min(255.0f, std::max(0.0f, v));
      img.rgb[static_cast<size_t>(3 * i + c)] = static_cast<uint8_t>(std::lround(v));
    }
  return img;
}

// raw tensor file: "WDT1", u32 rank, u32 dims[rank], f32 little-endian payload
inline void write_tensor_raw(const std::string& path, const Tensor<float>& t) {
  std::string buf = "WDT1";
  detail::put_u32(buf, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) detail::put_u32(buf, static_cast<uint32_t>(d));
  const size_t off = buf.size();
  buf.resize(off + t.data().size() * 4);
  std::memcpy(buf.data() + off, t.data().data(), t.data().size() * 4);
  detail::atomic_write(path, buf);
}

inline Tensor<float> read_tensor_raw(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 8 || bytes.compare(0, 4, "WDT1") != 0)
    fail(path + ": not a raw tensor file");
  const uint8_t* p = reinterpret_cast<const uint8_t*>(bytes.data());
  const uint32_t rank = detail::get_u32(p + 4);
  if (rank == 0 || rank > 8 || bytes.size() < 8 + 4 * rank) fail(path + ": malformed header");
  Shape shape;
  int64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const int64_t d = detail::get_u32(p + 8 + 4 * i);
    shape.push_back(d);
    n *= d;
  }
  const size_t payload = 8 + 4 * rank;
  if (bytes.size() != payload + static_cast<size_t>(n) * 4)
    fail(path + ": payload size mismatch");
  std::vector<float> data(static_cast<size_t>(n));
  std::memcpy(data.data(), bytes.data() + payload, data.size() * 4);
  return Tensor<float>::from(std::move(data), shape);
}

}  // namespace sfunet
