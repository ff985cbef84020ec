#pragma once

// Desk-scale quality proxies: reconstruction error, per-subband moments, and
// an L1 composite distance between subband statistics (the documented
// stand-in for classifier-based scores, never presented as one).

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sfunet/tensor.hpp"

namespace sfunet {

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    fail("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0;
  for (size_t i = 0; i < a.data().size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

// peak = 2 for data in [-1, 1]; mse of zero maps to +inf
inline double psnr(double mse_value, double peak = 2.0) {
  if (mse_value < 0) fail("psnr: negative mse");
  if (mse_value == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse_value);
}

struct SubbandStats {
  // indexed (ll, lh, hl, hh)
  std::array<double, 4> mean{}, stddev{}, abs_mean{}, energy_share{};
};

// pooled over batch, channels and positions; stacks: [B,C,4,h,w]
inline SubbandStats subband_stats(const Tensor<float>& stacks) {
  if (stacks.rank() != 5 || stacks.dim(2) != 4)
    fail("subband_stats: expected [B,C,4,h,w], got " + shape_str(stacks.shape()));
  if (stacks.dim(0) < 1) fail("subband_stats: empty batch");
  SubbandStats st;
  const int64_t BC = stacks.dim(0) * stacks.dim(1), hw = stacks.dim(3) * stacks.dim(4);
  std::array<double, 4> sum{}, sum2{}, sum_abs{};
  for (int64_t bc = 0; bc < BC; ++bc)
    for (int64_t s = 0; s < 4; ++s)
      for (int64_t i = 0; i < hw; ++i) {
        const double v = stacks.data()[(bc * 4 + s) * hw + i];
        sum[static_cast<size_t>(s)] += v;
        sum2[static_cast<size_t>(s)] += v * v;
        sum_abs[static_cast<size_t>(s)] += std::abs(v);
      }
  const double n = static_cast<double>(BC * hw);
  const double total_energy = sum2[0] + sum2[1] + sum2[2] + sum2[3];
  for (size_t s = 0; s < 4; ++s) {
    st.mean[s] = sum[s] / n;
    const double var = std::max(0.0, sum2[s] / n - st.mean[s] * st.mean[s]);
    st.stddev[s] = std::sqrt(var);
    st.abs_mean[s] = sum_abs[s] / n;
    st.energy_share[s] = total_energy > 0 ? sum2[s] / total_energy : 0.25;
  }
  return st;
}

// sum over subbands of |dmean| + |dstd| + |denergy-share|
inline double stats_distance(const SubbandStats& a, const SubbandStats& b) {
  double d = 0;
  for (size_t s = 0; s < 4; ++s)
    d += std::abs(a.mean[s] - b.mean[s]) + std::abs(a.stddev[s] - b.stddev[s]) +
         std::abs(a.energy_share[s] - b.energy_share[s]);
  return d;
}

}  // namespace sfunet
