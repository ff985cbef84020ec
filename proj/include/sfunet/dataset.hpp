#pragma once

// Dataset loading (directory of PPM images, all the same even size), the
// procedural toy generators, and resumable shuffled batching.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfunet/image.hpp"
#include "sfunet/rng.hpp"
#include "sfunet/tensor.hpp"

namespace sfunet {

struct Dataset {
  int64_t count = 0, height = 0, width = 0;
  std::vector<float> pixels;  // [N,3,H,W], normalized to [-1,1]

  int64_t image_elems() const { return 3 * height * width; }

  Tensor<float> image(int64_t i) const {
    if (i < 0 || i >= count) fail("dataset: index out of range");
    std::vector<float> v(pixels.begin() + i * image_elems(),
                         pixels.begin() + (i + 1) * image_elems());
    return Tensor<float>::from(std::move(v), {3, height, width});
  }

  void append(const ImageU8& img) {
    if (count == 0) {
      height = img.height;
      width = img.width;
    }
    auto t = image_to_tensor(img);
    pixels.insert(pixels.end(), t.data().begin(), t.data().end());
    ++count;
  }
};

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail("dataset path is not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".ppm" || ext == ".wdt") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail("no .ppm or .wdt images found in " + dir);
  Dataset ds;
  std::vector<std::string> offenders;
  for (const auto& f : files) {
    int64_t h = 0, w = 0;
    if (f.size() > 4 && f.compare(f.size() - 4, 4, ".wdt") == 0) {
      // raw [3,H,W] float tensor, already in [-1,1]
      Tensor<float> t = read_tensor_raw(f);
      if (t.rank() == 4 && t.dim(0) == 1) t = reshape(t, {t.dim(1), t.dim(2), t.dim(3)});
      if (t.rank() != 3 || t.dim(0) != 3)
        fail(f + ": expected a [3,H,W] tensor, got " + shape_str(t.shape()));
      h = t.dim(1);
      w = t.dim(2);
      if (ds.count == 0) {
        ds.height = h;
        ds.width = w;
      }
      if (h == ds.height && w == ds.width) {
        ds.pixels.insert(ds.pixels.end(), t.data().begin(), t.data().end());
        ++ds.count;
        continue;
      }
    } else {
      ImageU8 img = read_ppm(f);
      h = img.height;
      w = img.width;
      if (ds.count == 0 || (h == ds.height && w == ds.width)) {
        ds.append(img);
        continue;
      }
    }
    offenders.push_back(f + " (" + std::to_string(w) + "x" + std::to_string(h) + ")");
  }
  if (!offenders.empty()) {
    std::string msg = "mixed image dimensions in " + dir + "; expected " +
                      std::to_string(ds.width) + "x" + std::to_string(ds.height) + ":";
    for (const auto& o : offenders) msg += "\n  " + o;
    fail(msg);
  }
  if (ds.height % 2 || ds.width % 2)
    fail("dataset images must have even dimensions, got " + std::to_string(ds.width) + "x" +
         std::to_string(ds.height));
  return ds;
}

// ---------------------------------------------------------------------------
// toy data: RGB images with controllable low/high-frequency content;
// generated as quantized 8-bit so in-memory data equals the on-disk PPM bytes

enum class ToyKind { Blobs, Stripes, Checkers };

inline ToyKind toy_kind_from(const std::string& s) {
  if (s == "blobs") return ToyKind::Blobs;
  if (s == "stripes") return ToyKind::Stripes;
  if (s == "checkers") return ToyKind::Checkers;
  fail("unknown toy kind '" + s + "' (expected blobs | stripes | checkers)");
}

namespace detail {

inline ImageU8 quantize(const std::vector<float>& chw, int64_t size) {
  ImageU8 img;
  img.width = img.height = size;
  img.rgb.resize(static_cast<size_t>(3 * size * size));
  const int64_t hw = size * size;
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      float v = (chw[static_cast<size_t>(c * hw + i)] + 1.0f) * 127.5f;
      v = std::min(255.0f, std::max(0.0f, v));
      img.rgb[static_cast<size_t>(3 * i + c)] = static_cast<uint8_t>(std::lround(v));
    }
  return img;
}

inline ImageU8 toy_blobs(RngState& rng, int64_t size) {
  std::vector<float> img(static_cast<size_t>(3 * size * size));
  float base[3];
  for (auto& b : base) b = static_cast<float>(rng.uniform(-0.9, -0.3));
  const int64_t hw = size * size;
  for (int64_t c = 0; c < 3; ++c)
    std::fill_n(img.begin() + c * hw, hw, base[c]);
  const int64_t bumps = 2 + rng.uniform_int(3);
  for (int64_t k = 0; k < bumps; ++k) {
    const double cx = rng.uniform(0.0, static_cast<double>(size));
    const double cy = rng.uniform(0.0, static_cast<double>(size));
    const double sigma = rng.uniform(size / 8.0, size / 3.0);
    float amp[3];
    for (auto& a : amp) a = static_cast<float>(rng.uniform(0.3, 1.2));
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const float g = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
        for (int64_t c = 0; c < 3; ++c) img[static_cast<size_t>(c * hw + y * size + x)] += amp[c] * g;
      }
  }
  for (auto& v : img) v = std::min(1.0f, std::max(-1.0f, v));
  return quantize(img, size);
}

inline ImageU8 toy_stripes(RngState& rng, int64_t size) {
  std::vector<float> img(static_cast<size_t>(3 * size * size));
  const bool vertical = rng.uniform01() < 0.5;
  const int64_t half_period = 1 << rng.uniform_int(3);  // stripe width 1, 2 or 4
  float c1[3], c2[3];
  for (int64_t c = 0; c < 3; ++c) {
    c1[c] = static_cast<float>(rng.uniform(-1.0, 1.0));
    c2[c] = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  const int64_t hw = size * size;
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const int64_t band = (vertical ? x : y) / half_period;
      const float* col = (band % 2 == 0) ? c1 : c2;
      for (int64_t c = 0; c < 3; ++c) img[static_cast<size_t>(c * hw + y * size + x)] = col[c];
    }
  return quantize(img, size);
}

inline ImageU8 toy_checkers(RngState& rng, int64_t size) {
  // period-2 checkerboard: alternating single pixels, the pattern the hh
  // kernel responds to most strongly
  std::vector<float> img(static_cast<size_t>(3 * size * size));
  const int64_t phase = rng.uniform_int(2);
  float c1[3], c2[3];
  for (int64_t c = 0; c < 3; ++c) {
    c1[c] = static_cast<float>(rng.uniform(-1.0, 1.0));
    c2[c] = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  const int64_t hw = size * size;
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const float* col = ((x + y + phase) % 2 == 0) ? c1 : c2;
      for (int64_t c = 0; c < 3; ++c) img[static_cast<size_t>(c * hw + y * size + x)] = col[c];
    }
  return quantize(img, size);
}

}  // namespace detail

inline Dataset make_toy_dataset(ToyKind kind, int64_t n, int64_t size, uint64_t seed) {
  if (size < 8 || size % 2) fail("make_toy_dataset: size must be even and >= 8");
  if (n < 1) fail("make_toy_dataset: need at least one image");
  RngState rng(seed);
  Dataset ds;
  for (int64_t i = 0; i < n; ++i) {
    switch (kind) {
      case ToyKind::Blobs: ds.append(detail::toy_blobs(rng, size)); break;
      case ToyKind::Stripes: ds.append(detail::toy_stripes(rng, size)); break;
      case ToyKind::Checkers: ds.append(detail::toy_checkers(rng, size)); break;
    }
  }
  return ds;
}

inline void write_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int64_t i = 0; i < ds.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img-%05lld.ppm", static_cast<long long>(i));
    write_ppm((fs::path(dir) / name).string(), tensor_to_image(ds.image(i)));
  }
}

// ---------------------------------------------------------------------------
// shuffled-without-replacement epochs; per-epoch permutation is derived from
// (seed, epoch) so (epoch, cursor) fully describe the iterator for resume

struct BatchIterator {
  const Dataset* ds = nullptr;
  uint64_t seed = 0;
  int64_t epoch = 0, cursor = 0;
  std::vector<int64_t> perm;

  BatchIterator() = default;
  BatchIterator(const Dataset& d, uint64_t shuffle_seed, int64_t start_epoch = 0,
                int64_t start_cursor = 0)
      : ds(&d), seed(shuffle_seed), epoch(start_epoch), cursor(start_cursor) {
    reshuffle();
  }

  void reshuffle() {
    perm.resize(static_cast<size_t>(ds->count));
    for (int64_t i = 0; i < ds->count; ++i) perm[static_cast<size_t>(i)] = i;
    RngState r(seed ^ (0x9E3779B97F4A7C15ull * static_cast<uint64_t>(epoch + 1)));
    r.shuffle(perm);
  }

  Tensor<float> next(int64_t batch) {
    if (batch < 1) fail("batch size must be positive");
    if (cursor >= ds->count) {
      ++epoch;
      cursor = 0;
      reshuffle();
    }
    const int64_t take = std::min(batch, ds->count - cursor);
    Tensor<float> out = Tensor<float>::zeros({take, 3, ds->height, ds->width});
    const int64_t elems = ds->image_elems();
    for (int64_t i = 0; i < take; ++i) {
      const int64_t src = perm[static_cast<size_t>(cursor + i)];
      std::copy_n(ds->pixels.begin() + src * elems, elems, out.data().begin() + i * elems);
    }
    cursor += take;
    return out;
  }
};

}  // namespace sfunet
