#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sfunet/checkpoint.hpp"
#include "sfunet/config.hpp"
#include "sfunet/dataset.hpp"
#include "sfunet/image.hpp"
#include "sfunet/metrics.hpp"
#include "sfunet/wavelet.hpp"

using namespace sfunet;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("sfunet_io_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("ppm round trip is lossless at 8 bit") {
  RngState rng(1);
  ImageU8 img;
  img.width = 6;
  img.height = 4;
  img.rgb.resize(72);
  for (auto& v : img.rgb) v = static_cast<uint8_t>(rng.uniform_int(256));
  const std::string path = temp_dir("ppm") + "/x.ppm";
  write_ppm(path, img);
  auto back = read_ppm(path);
  CHECK(back.width == 6);
  CHECK(back.height == 4);
  CHECK(back.rgb == img.rgb);
  CHECK_THROWS_WITH_AS(read_ppm(path + ".missing"), doctest::Contains("missing"),
                       std::runtime_error);
}

TEST_CASE("pixel normalization endpoints") {
  ImageU8 img;
  img.width = img.height = 2;
  img.rgb.assign(12, 0);
  img.rgb[0] = 255;
  auto t = image_to_tensor(img);
  CHECK(t.data()[0] == doctest::Approx(1.0f));
  CHECK(t.data()[1] == doctest::Approx(-1.0f));
  auto back = tensor_to_image(t);
  CHECK(back.rgb == img.rgb);
}

TEST_CASE("raw tensor file round trip") {
  RngState rng(2);
  auto t = Tensor<float>::randn(rng, {1, 3, 4, 5, 5});
  const std::string path = temp_dir("raw") + "/t.wdt";
  write_tensor_raw(path, t);
  auto back = read_tensor_raw(path);
  CHECK(back.shape() == t.shape());
  CHECK(back.data() == t.data());
}

TEST_CASE("checkpoint round trip is bitwise and CRC catches corruption") {
  RngState rng(3);
  Checkpoint c;
  c.config_json = "{\"model\":{}}";
  c.params.emplace_back("a.weight", Tensor<float>::randn(rng, {3, 4}));
  c.params.emplace_back("a.bias", Tensor<float>::randn(rng, {4}));
  c.ema = c.params;
  c.adam_m.emplace_back("a.weight", Tensor<float>::zeros({3, 4}));
  c.adam_m.emplace_back("a.bias", Tensor<float>::zeros({4}));
  c.adam_v = c.adam_m;
  c.rng_state = rng.serialize();

  const std::string path = temp_dir("ckpt") + "/c.wdck";
  save_checkpoint(path, c);
  auto back = load_checkpoint(path);
  CHECK(back.config_json == c.config_json);
  REQUIRE(back.params.size() == 2);
  CHECK(back.params[0].first == "a.weight");
  CHECK(back.params[0].second.data() == c.params[0].second.data());
  CHECK(back.ema[1].second.data() == c.ema[1].second.data());
  CHECK(back.rng_state == c.rng_state);

  // flip one byte anywhere -> refused
  std::string bytes = detail::read_file(path);
  for (size_t pos : {size_t{9}, bytes.size() / 2, bytes.size() - 5}) {
    std::string corrupt = bytes;
    corrupt[pos] = static_cast<char>(corrupt[pos] ^ 0x40);
    const std::string bad_path = temp_dir("ckpt_bad") + "/bad.wdck";
    detail::atomic_write(bad_path, corrupt);
    CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), doctest::Contains("CRC"),
                         std::runtime_error);
  }
}

TEST_CASE("config parsing is strict about unknown keys") {
  const std::string good = R"({
    "model": {"variant": "sfunet", "base_channels": 16, "channel_mult": [1,2],
              "blocks_per_stage": 1, "attention_resolutions": [4],
              "num_heads": 4, "dropout": 0.1, "image_size": 16},
    "trainer": {"lr": 1e-4, "batch_size": 32, "iterations": 100, "seed": 7},
    "schedule": {"timesteps": 100},
    "sampling": {"count": 4, "steps": 50}
  })";
  auto rc = parse_run_config(good);
  CHECK(rc.model.base_channels == 16);
  CHECK(rc.trainer.iterations == 100);
  CHECK(rc.schedule.timesteps == 100);
  CHECK(rc.sampling.steps == 50);

  // round trip through the writer
  auto rc2 = parse_run_config(run_config_to_json(rc));
  CHECK(rc2.model.channel_mult == rc.model.channel_mult);
  CHECK(rc2.trainer.seed == rc.trainer.seed);

  CHECK_THROWS_WITH_AS(parse_run_config(R"({"model": {"variannt": "sfunet"}})"),
                       doctest::Contains("variannt"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"mode": {}})"), doctest::Contains("mode"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"trainer": {"lr": -1}})"),
                       doctest::Contains("lr"), std::runtime_error);
  CHECK_THROWS_AS(parse_run_config("not json"), std::runtime_error);
}

TEST_CASE("dataset loading, batching, and epoch reshuffle") {
  auto ds = make_toy_dataset(ToyKind::Blobs, 10, 8, 5);
  const std::string dir = temp_dir("ds");
  write_dataset(dir, ds);
  auto loaded = load_dataset(dir);
  CHECK(loaded.count == 10);
  CHECK(loaded.pixels == ds.pixels);  // quantized generation equals disk bytes

  BatchIterator it(loaded, 99);
  auto b1 = it.next(4);
  auto b2 = it.next(4);
  auto b3 = it.next(4);
  CHECK(b1.dim(0) == 4);
  CHECK(b2.dim(0) == 4);
  CHECK(b3.dim(0) == 2);  // remainder of the epoch
  auto b4 = it.next(4);   // triggers reshuffle
  CHECK(b4.dim(0) == 4);
  CHECK(it.epoch == 1);

  // a full epoch visits every image exactly once
  BatchIterator it2(loaded, 7);
  std::vector<uint64_t> seen;
  for (int i = 0; i < 3; ++i) {
    auto b = it2.next(4);
    for (int64_t k = 0; k < b.dim(0); ++k) {
      std::vector<float> img(b.data().begin() + k * loaded.image_elems(),
                             b.data().begin() + (k + 1) * loaded.image_elems());
      seen.push_back(bit_fingerprint(Tensor<float>::from(std::move(img), {3, 8, 8})));
    }
  }
  std::sort(seen.begin(), seen.end());
  CHECK(std::unique(seen.begin(), seen.end()) == seen.end());

  CHECK_THROWS_WITH_AS(load_dataset(temp_dir("empty")), doctest::Contains("no .ppm"),
                       std::runtime_error);
}

TEST_CASE("datasets may mix ppm and raw tensor members") {
  const std::string dir = temp_dir("wdt");
  auto ds = make_toy_dataset(ToyKind::Blobs, 2, 8, 3);
  write_dataset(dir, ds);
  RngState rng(9);
  auto extra = Tensor<float>::rand_uniform(rng, {3, 8, 8}, -1.0f, 1.0f);
  write_tensor_raw(dir + "/zz-raw.wdt", extra);
  auto loaded = load_dataset(dir);
  CHECK(loaded.count == 3);
  // raw members keep their float values untouched (sorted last here)
  auto back = loaded.image(2);
  CHECK(back.data() == extra.data());

  write_tensor_raw(dir + "/zz-bad.wdt", Tensor<float>::zeros({3, 16, 16}));
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("zz-bad"), std::runtime_error);
}

TEST_CASE("mixed dimensions are rejected with the offending files listed") {
  const std::string dir = temp_dir("mixed");
  auto a = make_toy_dataset(ToyKind::Blobs, 2, 8, 1);
  write_dataset(dir, a);
  ImageU8 odd;
  odd.width = odd.height = 16;
  odd.rgb.assign(16 * 16 * 3, 128);
  write_ppm(dir + "/zz-big.ppm", odd);
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("zz-big"), std::runtime_error);
}

TEST_CASE("toy generators have the advertised spectra") {
  auto batch_of = [](const Dataset& ds) {
    Tensor<float> out = Tensor<float>::zeros({ds.count, 3, ds.height, ds.width});
    std::copy(ds.pixels.begin(), ds.pixels.end(), out.data().begin());
    return out;
  };
  // fixed seed -> identical bytes
  auto a = make_toy_dataset(ToyKind::Checkers, 6, 8, 42);
  auto b = make_toy_dataset(ToyKind::Checkers, 6, 8, 42);
  CHECK(a.pixels == b.pixels);

  // checkers (period 2): hh dominates the high subbands
  auto st = subband_stats(dwt(batch_of(a)));
  CHECK(st.energy_share[3] > st.energy_share[1]);
  CHECK(st.energy_share[3] > st.energy_share[2]);

  // stripes put real energy in the high subbands, far more than blobs
  auto stripes = subband_stats(dwt(batch_of(make_toy_dataset(ToyKind::Stripes, 16, 16, 2))));
  auto blobs = subband_stats(dwt(batch_of(make_toy_dataset(ToyKind::Blobs, 16, 16, 2))));
  const double hi_stripes = stripes.energy_share[1] + stripes.energy_share[2] + stripes.energy_share[3];
  const double hi_blobs = blobs.energy_share[1] + blobs.energy_share[2] + blobs.energy_share[3];
  CHECK(hi_stripes > 2.0 * hi_blobs);

  CHECK_THROWS_AS(make_toy_dataset(ToyKind::Blobs, 4, 7, 1), std::runtime_error);
  CHECK_THROWS_AS(make_toy_dataset(ToyKind::Blobs, 0, 8, 1), std::runtime_error);
}
