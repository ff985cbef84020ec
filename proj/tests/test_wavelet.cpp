#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sfunet/gradcheck.hpp"
#include "sfunet/wavelet.hpp"

using namespace sfunet;

TEST_CASE("haar kernels form an orthonormal basis of R^4") {
  const auto k = HaarKernels::make();
  for (int s = 0; s < 4; ++s)
    for (int t = 0; t < 4; ++t) {
      double dot = 0;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) dot += k[s][i][j] * k[t][i][j];
      CHECK(dot == doctest::Approx(s == t ? 1.0 : 0.0).epsilon(1e-12));
    }
}

TEST_CASE("dwt of a constant image") {
  auto x = Tensor<float>::full({1, 1, 4, 4}, 2.0f);
  auto u = dwt(x);
  CHECK(u.shape() == Shape{1, 1, 4, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(u.data()[i] == doctest::Approx(4.0f));          // ll
  for (size_t i = 4; i < u.data().size(); ++i) CHECK(u.data()[i] == doctest::Approx(0.0f));
}

TEST_CASE("dwt hand-computed 2x2 example") {
  // [[1,3],[2,4]] -> (ll,lh,hl,hh) = (5,2,1,0)/... each kernel dot product:
  // ll = (1+3+2+4)/2 = 5, lh = (-1+3-2+4)/2 = 2, hl = (-1-3+2+4)/2 = 1, hh = (1-3-2+4)/2 = 0
  auto x = Tensor<float>::from({1, 3, 2, 4}, {1, 1, 2, 2});
  auto u = dwt(x);
  CHECK(u.data()[0] == doctest::Approx(5.0f));
  CHECK(u.data()[1] == doctest::Approx(2.0f));
  CHECK(u.data()[2] == doctest::Approx(1.0f));
  CHECK(u.data()[3] == doctest::Approx(0.0f));
  // energy: 1+9+4+16 = 30 = 25+4+1+0
  CHECK(oracles::sum_squares(u) == doctest::Approx(30.0));
  // inverse of the hand-computed example
  auto back = iwt(u);
  CHECK(oracles::max_abs_diff(back, x) < 1e-6);
}

TEST_CASE("iwt of pure ll is constant") {
  auto u = Tensor<float>::zeros({1, 1, 4, 2, 2});
  for (int i = 0; i < 4; ++i) u.data()[i] = 4.0f;
  auto x = iwt(u);
  for (float v : x.data()) CHECK(v == doctest::Approx(2.0f));
}

TEST_CASE("perfect reconstruction and energy conservation") {
  RngState rng(21);
  for (int64_t size : {8, 16, 32}) {
    auto x = Tensor<float>::rand_uniform(rng, {2, 3, size, size}, -1.0f, 1.0f);
    auto u = dwt(x);
    auto back = iwt(u);
    CHECK(oracles::max_abs_diff(back, x) < 1e-5);
    const double ex = oracles::sum_squares(x);
    const double eu = oracles::sum_squares(u);
    CHECK(std::abs(std::sqrt(eu) - std::sqrt(ex)) / std::sqrt(ex) < 1e-4);
  }
}

TEST_CASE("rectangular images round trip too") {
  RngState rng(77);
  auto x = Tensor<float>::rand_uniform(rng, {1, 3, 6, 10}, -1.0f, 1.0f);
  auto u = dwt(x);
  CHECK(u.shape() == Shape{1, 3, 4, 3, 5});
  CHECK(oracles::max_abs_diff(iwt(u), x) < 1e-5);
}

TEST_CASE("dwt is linear") {
  RngState rng(4);
  auto x = Tensor<float>::randn(rng, {1, 2, 8, 8});
  auto y = Tensor<float>::randn(rng, {1, 2, 8, 8});
  const float a = 0.7f, b = -1.3f;
  auto lhs = dwt(add(mul(x, a), mul(y, b)));
  auto rhs = add(mul(dwt(x), a), mul(dwt(y), b));
  CHECK(oracles::max_abs_diff(lhs, rhs) < 1e-5);
}

TEST_CASE("dwt of unit gaussian noise stays unit gaussian per subband") {
  RngState rng(100);
  auto x = Tensor<float>::randn(rng, {4, 3, 64, 64});  // 12288 coeffs per subband
  auto u = dwt(x);
  const int64_t per = u.dim(0) * u.dim(1) * u.dim(3) * u.dim(4);
  for (int s = 0; s < 4; ++s) {
    double m = 0, m2 = 0;
    for (int64_t bc = 0; bc < u.dim(0) * u.dim(1); ++bc)
      for (int64_t i = 0; i < u.dim(3) * u.dim(4); ++i) {
        const double v = u.data()[(bc * 4 + s) * u.dim(3) * u.dim(4) + i];
        m += v;
        m2 += v * v;
      }
    m /= static_cast<double>(per);
    const double var = m2 / static_cast<double>(per) - m * m;
    CHECK(var > 0.9);
    CHECK(var < 1.1);
  }
}

TEST_CASE("odd sizes and wrong subband extent are rejected") {
  CHECK_THROWS_AS(dwt(Tensor<float>::zeros({1, 1, 5, 4})), std::runtime_error);
  CHECK_THROWS_AS(dwt(Tensor<float>::zeros({1, 1, 4, 7})), std::runtime_error);
  CHECK_THROWS_AS(iwt(Tensor<float>::zeros({1, 1, 3, 2, 2})), std::runtime_error);
}

TEST_CASE("dwt_concat layout equals reshape of the 5D layout") {
  RngState rng(33);
  auto x = Tensor<float>::rand_uniform(rng, {2, 3, 8, 8}, -1.0f, 1.0f);
  auto flat = dwt_concat(x);
  CHECK(flat.shape() == Shape{2, 12, 4, 4});
  auto u = dwt(x);
  // channel-major frequency-minor: flat channel 4c+f == u[:, c, f]
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t f = 0; f < 4; ++f)
        for (int64_t i = 0; i < 16; ++i)
          CHECK(flat.data()[((b * 12 + 4 * c + f) * 16) + i] ==
                u.data()[(((b * 3 + c) * 4 + f) * 16) + i]);
  auto back = iwt_concat(flat);
  CHECK(oracles::max_abs_diff(back, x) < 1e-5);
}

TEST_CASE("gradients: iwt is the adjoint of dwt") {
  RngState rng(55);
  auto x = Tensor<double>::randn(rng, {1, 2, 4, 4});
  auto w = Tensor<double>::randn(rng, {1, 2, 4, 2, 2});
  auto res = grad_check([&] { return sum_all(mul(dwt(x), w)); }, {x});
  CHECK_MESSAGE(res.ok, "dwt: ", res.worst, " rel=", res.max_rel_err);

  auto u = Tensor<double>::randn(rng, {1, 2, 4, 2, 2});
  auto wx = Tensor<double>::randn(rng, {1, 2, 4, 4});
  auto res2 = grad_check([&] { return sum_all(mul(iwt(u), wx)); }, {u});
  CHECK_MESSAGE(res2.ok, "iwt: ", res2.worst, " rel=", res2.max_rel_err);
}
