#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sfunet/diffusion.hpp"

using namespace sfunet;

TEST_CASE("linear schedule endpoints and midpoint") {
  auto s = linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.get_beta(1) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.get_beta(1000) == doctest::Approx(0.02).epsilon(1e-12));
  // independent interpolation: beta[500] = start + 499*(end-start)/999
  const double expected = 1e-4 + 499.0 * (0.02 - 1e-4) / 999.0;
  CHECK(s.get_beta(500) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(s.get_beta(500) - 0.0100394) < 1e-5);
}

TEST_CASE("alpha tables") {
  auto s = linear_schedule(2, 0.5, 0.5);
  CHECK(s.get_alpha_bar(1) == doctest::Approx(0.5));
  CHECK(s.get_alpha_bar(2) == doctest::Approx(0.25));

  auto s2 = linear_schedule(1000);
  for (int64_t t = 2; t <= 1000; ++t) {
    CHECK(s2.get_beta(t) > s2.get_beta(t - 1));
    CHECK(s2.get_alpha_bar(t) < s2.get_alpha_bar(t - 1));
    CHECK(s2.get_alpha(t) == doctest::Approx(1.0 - s2.get_beta(t)).epsilon(1e-12));
    CHECK(s2.get_sigma(t) == doctest::Approx(std::sqrt(s2.get_beta(t))).epsilon(1e-12));
  }
  CHECK(s2.get_alpha_bar(1000) < s2.get_alpha_bar(1));

  CHECK_THROWS_AS(linear_schedule(0), std::runtime_error);
  CHECK_THROWS_AS(linear_schedule(10, 0.0, 0.02), std::runtime_error);
  CHECK_THROWS_AS(linear_schedule(10, 0.02, 1e-4), std::runtime_error);
  CHECK_THROWS_AS(linear_schedule(10, 1e-4, 1.0), std::runtime_error);
}

TEST_CASE("schedule recomputation is bitwise reproducible") {
  auto a = linear_schedule(500, 2e-4, 0.015);
  auto b = linear_schedule(500, 2e-4, 0.015);
  CHECK(a.beta == b.beta);
  CHECK(a.alpha_bar == b.alpha_bar);
  CHECK(a.sigma == b.sigma);
}

TEST_CASE("q_sample limiting cases") {
  RngState rng(1);
  auto u0 = Tensor<float>::randn(rng, {1, 3, 4, 2, 2});
  auto eps = Tensor<float>::randn(rng, {1, 3, 4, 2, 2});

  // injected table with alpha_bar = 1 (beta -> 0 limit): u_t == u_0
  NoiseSchedule inj = linear_schedule(3);
  inj.alpha_bar.assign(4, 1.0);
  auto ut = q_sample(inj, u0, 2, eps);
  CHECK(oracles::max_abs_diff(ut, u0) == 0.0);

  // eps = 0: u_t = sqrt(alpha_bar_t) u_0
  auto s = linear_schedule(100);
  auto zero = Tensor<float>::zeros(u0.shape());
  auto ut2 = q_sample(s, u0, 50, zero);
  const float a = static_cast<float>(std::sqrt(s.get_alpha_bar(50)));
  for (size_t i = 0; i < u0.data().size(); ++i)
    CHECK(ut2.data()[i] == doctest::Approx(a * u0.data()[i]));

  CHECK_THROWS_AS(q_sample(s, u0, 0, eps), std::runtime_error);
  CHECK_THROWS_AS(q_sample(s, u0, 101, eps), std::runtime_error);
  CHECK_THROWS_AS(q_sample(s, u0, 5, Tensor<float>::zeros({2, 2})), std::runtime_error);
}

TEST_CASE("q_sample preserves unit variance (monte carlo)") {
  RngState rng(42);
  auto s = linear_schedule(1000);
  double m = 0, m2 = 0;
  int64_t count = 0;
  for (int rep = 0; rep < 4; ++rep) {
    auto u0 = Tensor<float>::randn(rng, {1, 3, 4, 50, 50});
    auto eps = Tensor<float>::randn(rng, {1, 3, 4, 50, 50});
    const int64_t t = 1 + rng.uniform_int(1000);
    auto ut = q_sample(s, u0, t, eps);
    for (float v : ut.data()) {
      m += v;
      m2 += static_cast<double>(v) * v;
      ++count;
    }
  }
  m /= static_cast<double>(count);
  const double var = m2 / static_cast<double>(count) - m * m;  // 120k coeffs
  CHECK(var > 0.95);
  CHECK(var < 1.05);
}

TEST_CASE("reverse_step inverts q_sample exactly at t=1") {
  RngState rng(5);
  auto s = linear_schedule(100);
  auto u0 = Tensor<float>::randn(rng, {2, 3, 4, 4, 4});
  auto eps = Tensor<float>::randn(rng, {2, 3, 4, 4, 4});
  auto u1 = q_sample(s, u0, 1, eps);
  auto back = reverse_step(s, u1, eps, 1);
  CHECK(oracles::max_abs_diff(back, u0) < 1e-5);
}

TEST_CASE("reverse_step formula reduction with zero inputs") {
  RngState rng(6);
  auto s = linear_schedule(100);
  auto ut = Tensor<float>::randn(rng, {1, 1, 4, 2, 2});
  auto zero = Tensor<float>::zeros(ut.shape());
  auto out = reverse_step(s, ut, zero, 10, &zero);
  const float inv = static_cast<float>(1.0 / std::sqrt(s.get_alpha(10)));
  for (size_t i = 0; i < ut.data().size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(ut.data()[i] * inv));

  auto z_nonzero = Tensor<float>::full(ut.shape(), 1.0f);
  CHECK_THROWS_AS(reverse_step(s, ut, zero, 1, &z_nonzero), std::runtime_error);
}

TEST_CASE("reverse_step noise raises variance by sigma^2 (monte carlo)") {
  RngState rng(7);
  auto s = linear_schedule(100);
  const int64_t t = 60;
  const int64_t n = 10000;
  auto ut = Tensor<float>::randn(rng, {1, 1, 4, 50, 50});
  auto eps_hat = Tensor<float>::zeros(ut.shape());
  auto base = reverse_step(s, ut, eps_hat, t);
  auto z = Tensor<float>::randn(rng, ut.shape());
  auto noisy = reverse_step(s, ut, eps_hat, t, &z);
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(noisy.data()[i]) - base.data()[i];
    acc += d * d;
  }
  const double measured = acc / static_cast<double>(n);
  const double want = s.get_sigma(t) * s.get_sigma(t);
  CHECK(measured == doctest::Approx(want).epsilon(0.10));
}

TEST_CASE("subsample_schedule identity and telescoping") {
  auto s = linear_schedule(4, 0.1, 0.4);
  auto same = subsample_schedule(s, 4);
  CHECK(same.alpha == s.alpha);
  CHECK(same.alpha_bar == s.alpha_bar);
  CHECK(same.sigma == s.sigma);
  CHECK(same.orig_t == s.orig_t);

  // K=2 selects {2,4}: effective alphas (abar2, abar4/abar2)
  auto sub = subsample_schedule(s, 2);
  CHECK(sub.T == 2);
  CHECK(sub.get_orig_t(1) == 2);
  CHECK(sub.get_orig_t(2) == 4);
  CHECK(sub.get_alpha(1) == doctest::Approx(s.get_alpha_bar(2)).epsilon(1e-12));
  CHECK(sub.get_alpha(2) == doctest::Approx(s.get_alpha_bar(4) / s.get_alpha_bar(2)).epsilon(1e-12));

  CHECK_THROWS_AS(subsample_schedule(s, 0), std::runtime_error);
  CHECK_THROWS_AS(subsample_schedule(s, 5), std::runtime_error);
}

TEST_CASE("subsampled alpha_bar matches the original at kept steps") {
  auto s = linear_schedule(1000);
  for (int64_t K : {10, 50, 250, 999}) {
    auto sub = subsample_schedule(s, K);
    double prod = 1.0;
    for (int64_t k = 1; k <= K; ++k) {
      prod *= sub.get_alpha(k);
      const double orig = s.get_alpha_bar((k * s.T) / K);
      CHECK(std::abs(sub.get_alpha_bar(k) - orig) < 1e-12);
      CHECK(std::abs(prod - orig) < 1e-6);  // telescoping product rebuild
      CHECK(sub.get_orig_t(k) == (k * s.T) / K);
    }
    CHECK(sub.get_orig_t(K) == 1000);
  }
}
