#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sfunet/dataset.hpp"
#include "sfunet/metrics.hpp"
#include "sfunet/wavelet.hpp"

using namespace sfunet;

namespace {

Tensor<float> dataset_batch(const Dataset& ds, int64_t from, int64_t count) {
  Tensor<float> out = Tensor<float>::zeros({count, 3, ds.height, ds.width});
  for (int64_t i = 0; i < count; ++i) {
    auto img = ds.image(from + i);
    std::copy(img.data().begin(), img.data().end(),
              out.data().begin() + i * ds.image_elems());
  }
  return out;
}

}  // namespace

TEST_CASE("mse and psnr") {
  RngState rng(1);
  auto x = Tensor<float>::randn(rng, {2, 3, 4});
  CHECK(mse(x, x) == 0.0);
  CHECK(std::isinf(psnr(mse(x, x))));

  auto a = Tensor<float>::from({0.0f}, {1});
  auto b = Tensor<float>::from({2.0f}, {1});
  CHECK(mse(a, b) == doctest::Approx(4.0));

  CHECK(psnr(0.04, 2.0) == doctest::Approx(20.0).epsilon(1e-9));
  CHECK_THROWS_AS(mse(a, x), std::runtime_error);
}

TEST_CASE("subband stats of white noise") {
  RngState rng(2);
  auto x = Tensor<float>::randn(rng, {4, 3, 64, 64});
  auto st = subband_stats(dwt(x));
  double share_sum = 0;
  for (size_t s = 0; s < 4; ++s) {
    CHECK(st.stddev[s] > 0.9);
    CHECK(st.stddev[s] < 1.1);
    CHECK(st.energy_share[s] == doctest::Approx(0.25).epsilon(0.08));
    share_sum += st.energy_share[s];
  }
  CHECK(std::abs(share_sum - 1.0) < 1e-6);
}

TEST_CASE("subband stats of constant images") {
  auto x = Tensor<float>::full({2, 3, 8, 8}, 0.5f);
  auto st = subband_stats(dwt(x));
  CHECK(st.energy_share[0] == doctest::Approx(1.0));
  for (size_t s = 1; s < 4; ++s) {
    CHECK(st.energy_share[s] == doctest::Approx(0.0));
    CHECK(st.stddev[s] == doctest::Approx(0.0));
  }
  CHECK_THROWS_AS(subband_stats(Tensor<float>::zeros({1, 3, 3, 4, 4})), std::runtime_error);
}

TEST_CASE("blobs concentrate energy in ll") {
  auto ds = make_toy_dataset(ToyKind::Blobs, 32, 16, 11);
  auto st = subband_stats(dwt(dataset_batch(ds, 0, 32)));
  for (size_t s = 1; s < 4; ++s) CHECK(st.energy_share[0] > st.energy_share[s]);
  CHECK(st.energy_share[0] > 0.8);
}

TEST_CASE("stats distance is a pseudometric") {
  auto ds = make_toy_dataset(ToyKind::Blobs, 64, 16, 12);
  auto a = subband_stats(dwt(dataset_batch(ds, 0, 32)));
  auto b = subband_stats(dwt(dataset_batch(ds, 32, 32)));
  CHECK(stats_distance(a, a) == 0.0);
  CHECK(stats_distance(a, b) == stats_distance(b, a));
  CHECK(stats_distance(a, b) >= 0.0);
}

TEST_CASE("disjoint halves of a dataset are closer than pure noise") {
  auto ds = make_toy_dataset(ToyKind::Blobs, 64, 16, 13);
  auto a = subband_stats(dwt(dataset_batch(ds, 0, 32)));
  auto b = subband_stats(dwt(dataset_batch(ds, 32, 32)));
  RngState rng(14);
  auto noise = subband_stats(Tensor<float>::randn(rng, {32, 3, 4, 8, 8}));
  CHECK(stats_distance(a, b) < 0.3 * stats_distance(a, noise));
}
