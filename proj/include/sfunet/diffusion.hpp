#pragma once

// Noise schedule tables and the forward/reverse diffusion steps. Timesteps
// are 1-indexed (t in 1..T). The schedule is pure data; q_sample and
// reverse_step are pure given explicit noise tensors.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sfunet/tensor.hpp"

namespace sfunet {

enum class SigmaMode { Beta, BetaTilde };

inline std::string to_string(SigmaMode m) {
  return m == SigmaMode::Beta ? "beta" : "beta_tilde";
}
inline SigmaMode sigma_mode_from(const std::string& s) {
  if (s == "beta") return SigmaMode::Beta;
  if (s == "beta_tilde") return SigmaMode::BetaTilde;
  fail("unknown sigma_mode '" + s + "' (expected beta | beta_tilde)");
}

struct NoiseSchedule {
  int64_t T = 0;
  double beta_start = 0, beta_end = 0;
  SigmaMode sigma_mode = SigmaMode::Beta;
  std::vector<double> beta, alpha, alpha_bar, sigma;  // [0] unused, 1..T valid
  // original timestep each entry conditions the network on (identity unless
  // the schedule was subsampled)
  std::vector<int64_t> orig_t;

  double get_beta(int64_t t) const { check(t); return beta[static_cast<size_t>(t)]; }
  double get_alpha(int64_t t) const { check(t); return alpha[static_cast<size_t>(t)]; }
  double get_alpha_bar(int64_t t) const { check(t); return alpha_bar[static_cast<size_t>(t)]; }
  double get_sigma(int64_t t) const { check(t); return sigma[static_cast<size_t>(t)]; }
  int64_t get_orig_t(int64_t t) const { check(t); return orig_t[static_cast<size_t>(t)]; }

  void check(int64_t t) const {
    if (t < 1 || t > T)
      fail("timestep " + std::to_string(t) + " out of range [1," + std::to_string(T) + "]");
  }
};

namespace detail {

inline void fill_sigma(NoiseSchedule& s) {
  s.sigma.assign(static_cast<size_t>(s.T + 1), 0.0);
  for (int64_t t = 1; t <= s.T; ++t) {
    if (s.sigma_mode == SigmaMode::Beta) {
      s.sigma[static_cast<size_t>(t)] = std::sqrt(s.beta[static_cast<size_t>(t)]);
    } else {
      const double ab_prev = t > 1 ? s.alpha_bar[static_cast<size_t>(t - 1)] : 1.0;
      const double ab = s.alpha_bar[static_cast<size_t>(t)];
      s.sigma[static_cast<size_t>(t)] =
          std::sqrt(s.beta[static_cast<size_t>(t)] * (1.0 - ab_prev) / (1.0 - ab));
    }
  }
}

}  // namespace detail

inline NoiseSchedule linear_schedule(int64_t T, double beta_start = 1e-4,
                                     double beta_end = 0.02,
                                     SigmaMode sigma_mode = SigmaMode::Beta) {
  if (T < 1) fail("linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    fail("linear_schedule: need 0 < beta_start <= beta_end < 1, got start=" +
         std::to_string(beta_start) + " end=" + std::to_string(beta_end));
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.sigma_mode = sigma_mode;
  s.beta.assign(static_cast<size_t>(T + 1), 0.0);
  s.alpha.assign(static_cast<size_t>(T + 1), 0.0);
  s.alpha_bar.assign(static_cast<size_t>(T + 1), 0.0);
  s.orig_t.assign(static_cast<size_t>(T + 1), 0);
  double prod = 1.0;
  for (int64_t t = 1; t <= T; ++t) {
    const double b = T == 1 ? beta_start
                            : beta_start + static_cast<double>(t - 1) *
                                               (beta_end - beta_start) /
                                               static_cast<double>(T - 1);
    s.beta[static_cast<size_t>(t)] = b;
    s.alpha[static_cast<size_t>(t)] = 1.0 - b;
    prod *= 1.0 - b;
    s.alpha_bar[static_cast<size_t>(t)] = prod;
    s.orig_t[static_cast<size_t>(t)] = t;
  }
  detail::fill_sigma(s);
  return s;
}

// u_t = sqrt(alpha_bar_t) u0 + sqrt(1 - alpha_bar_t) eps
template <typename T>
Tensor<T> q_sample(const NoiseSchedule& sched, const Tensor<T>& u0, int64_t t,
                   const Tensor<T>& eps) {
  sched.check(t);
  if (u0.shape() != eps.shape())
    fail("q_sample: eps shape " + shape_str(eps.shape()) + " != u0 shape " + shape_str(u0.shape()));
  const double ab = sched.get_alpha_bar(t);
  const T a = static_cast<T>(std::sqrt(ab));
  const T b = static_cast<T>(std::sqrt(1.0 - ab));
  Tensor<T> out = Tensor<T>::uninit(u0.shape());
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a * u0.data()[i] + b * eps.data()[i];
  return out;
}

// per-example timesteps for minibatch training; u0[B,...], ts.size() == B
template <typename T>
Tensor<T> q_sample_batch(const NoiseSchedule& sched, const Tensor<T>& u0,
                         const std::vector<int64_t>& ts, const Tensor<T>& eps) {
  if (u0.shape() != eps.shape()) fail("q_sample_batch: shape mismatch");
  const int64_t B = u0.dim(0);
  if (static_cast<int64_t>(ts.size()) != B) fail("q_sample_batch: need one t per example");
  const int64_t inner = u0.numel() / B;
  Tensor<T> out = Tensor<T>::uninit(u0.shape());
  for (int64_t n = 0; n < B; ++n) {
    const double ab = sched.get_alpha_bar(ts[static_cast<size_t>(n)]);
    const T a = static_cast<T>(std::sqrt(ab));
    const T b = static_cast<T>(std::sqrt(1.0 - ab));
    for (int64_t i = 0; i < inner; ++i)
      out.data()[n * inner + i] = a * u0.data()[n * inner + i] + b * eps.data()[n * inner + i];
  }
  return out;
}

// u_{t-1} = (u_t - (1-alpha_t)/sqrt(1-alpha_bar_t) * eps_hat) / sqrt(alpha_t)
//           + sigma_t * z,   z = 0 when t == 1
template <typename T>
Tensor<T> reverse_step(const NoiseSchedule& sched, const Tensor<T>& ut,
                       const Tensor<T>& eps_hat, int64_t t, const Tensor<T>* z = nullptr) {
  sched.check(t);
  if (ut.shape() != eps_hat.shape())
    fail("reverse_step: eps_hat shape " + shape_str(eps_hat.shape()) + " != u_t shape " +
         shape_str(ut.shape()));
  if (t == 1 && z != nullptr) {
    for (T v : z->data())
      if (v != T(0)) fail("reverse_step: z must be zero at t=1");
  }
  const double a = sched.get_alpha(t);
  const double ab = sched.get_alpha_bar(t);
  const T inv_sqrt_a = static_cast<T>(1.0 / std::sqrt(a));
  const T coef = static_cast<T>((1.0 - a) / std::sqrt(1.0 - ab));
  const T sig = static_cast<T>(sched.get_sigma(t));
  Tensor<T> out = Tensor<T>::uninit(ut.shape());
  for (size_t i = 0; i < out.data().size(); ++i) {
    T v = inv_sqrt_a * (ut.data()[i] - coef * eps_hat.data()[i]);
    if (t > 1 && z != nullptr) v += sig * z->data()[i];
    out.data()[i] = v;
  }
  return out;
}

// Retimed K-step subsequence of a T-step schedule: keeps alpha_bar exactly at
// the selected steps (always including T) and rebuilds per-step alphas as
// telescoping ratios. K == T returns the original tables unchanged.
inline NoiseSchedule subsample_schedule(const NoiseSchedule& full, int64_t K) {
  if (K < 1 || K > full.T)
    fail("subsample_schedule: K=" + std::to_string(K) + " out of range [1," +
         std::to_string(full.T) + "]");
  if (K == full.T) return full;
  NoiseSchedule s;
  s.T = K;
  s.beta_start = full.beta_start;
  s.beta_end = full.beta_end;
  s.sigma_mode = full.sigma_mode;
  s.beta.assign(static_cast<size_t>(K + 1), 0.0);
  s.alpha.assign(static_cast<size_t>(K + 1), 0.0);
  s.alpha_bar.assign(static_cast<size_t>(K + 1), 0.0);
  s.orig_t.assign(static_cast<size_t>(K + 1), 0);
  double prev_ab = 1.0;
  for (int64_t k = 1; k <= K; ++k) {
    const int64_t t = (k * full.T) / K;  // strictly increasing, ends at T
    const double ab = full.get_alpha_bar(t);
    s.orig_t[static_cast<size_t>(k)] = full.get_orig_t(t);
    s.alpha_bar[static_cast<size_t>(k)] = ab;
    s.alpha[static_cast<size_t>(k)] = ab / prev_ab;
    s.beta[static_cast<size_t>(k)] = 1.0 - s.alpha[static_cast<size_t>(k)];
    prev_ab = ab;
  }
  detail::fill_sigma(s);
  return s;
}

}  // namespace sfunet
