#pragma once

// Reverse diffusion from pure noise, optional reduced-step schedule, optional
// trajectory capture, and the figure-style 2x2 subband mosaic export.
//
// RNG draw order (fixed, relied upon by the recurrence oracle in the tests):
// the initial noise tensor first, then one z tensor per step while t > 1.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sfunet/diffusion.hpp"
#include "sfunet/model.hpp"
#include "sfunet/trainer.hpp"

namespace sfunet {

struct SampleRequest {
  int64_t count = 1;
  int64_t height = 0, width = 0;
  int64_t steps = 0;  // 0: full schedule
  uint64_t seed = 0;
  int64_t traj_stride = 0;  // 0: off
  bool use_ema = true;
};

struct TrajectorySnapshot {
  int64_t t = 0;                  // original timestep being denoised
  Tensor<float> stack;            // state after that reverse step
  Tensor<float> pixel_preview;    // IWT of the snapshot (identity for pixel2d)
};

struct SampleResult {
  Tensor<float> images;  // [B,3,H,W], unclamped
  std::vector<TrajectorySnapshot> trajectory;
};

// denoiser: (u, per-example original timesteps) -> eps_hat, same shape as u
using DenoiseFn = std::function<Tensor<float>(const Tensor<float>&, const std::vector<int64_t>&)>;

inline SampleResult sample_loop(const ModelConfig& mc, const NoiseSchedule& full,
                                const SampleRequest& req, const DenoiseFn& denoise) {
  if (req.count < 1) fail("sample: count must be positive");
  if (req.height < 2 || req.height % 2 || req.width < 2 || req.width % 2)
    fail("sample: image size must be even and >= 2");
  const int64_t K = req.steps == 0 ? full.T : req.steps;
  if (K < 1 || K > full.T)
    fail("sample: steps " + std::to_string(K) + " out of range [1," + std::to_string(full.T) + "]");
  const NoiseSchedule sched = subsample_schedule(full, K);

  Shape shape;
  switch (mc.variant) {
    case Variant::Pixel2D:
      shape = {req.count, mc.in_channels, req.height, req.width};
      break;
    case Variant::Concat2D:
      shape = {req.count, 4 * mc.in_channels, req.height / 2, req.width / 2};
      break;
    default:
      shape = {req.count, mc.in_channels, 4, req.height / 2, req.width / 2};
      break;
  }

  NoGradGuard ng;
  RngState rng(req.seed);
  Tensor<float> u = Tensor<float>::randn(rng, shape);
  SampleResult result;
  const std::vector<int64_t> batch_t(static_cast<size_t>(req.count));
  for (int64_t k = K; k >= 1; --k) {
    std::vector<int64_t> ts(static_cast<size_t>(req.count), sched.get_orig_t(k));
    Tensor<float> eps_hat = denoise(u, ts);
    if (k > 1) {
      Tensor<float> z = Tensor<float>::randn(rng, shape);
      u = reverse_step(sched, u, eps_hat, k, &z);
    } else {
      u = reverse_step(sched, u, eps_hat, k);
    }
    for (float v : u.data())
      if (!std::isfinite(v))
        fail("sample: non-finite state after reverse step at t=" +
             std::to_string(sched.get_orig_t(k)));
    if (req.traj_stride > 0 && (K - k) % req.traj_stride == 0) {
      TrajectorySnapshot snap;
      snap.t = sched.get_orig_t(k);
      snap.stack = u.detach();
      snap.pixel_preview = to_pixel_space(mc, u);
      result.trajectory.push_back(std::move(snap));
    }
  }
  result.images = to_pixel_space(mc, u);
  return result;
}

// samples with the trained (or EMA) weights from a train state
inline SampleResult sample_model(TrainState& st, const SampleRequest& req) {
  std::vector<Buf<float>> saved;
  if (req.use_ema) {
    saved.reserve(st.model.pf.params.size());
    for (size_t i = 0; i < st.model.pf.params.size(); ++i) {
      saved.push_back(st.model.pf.params[i].second.data());
      st.model.pf.params[i].second.data() = st.ema[i].data();
    }
  }
  auto denoise = [&](const Tensor<float>& u, const std::vector<int64_t>& ts) {
    return st.model.forward(u, ts, /*train=*/false, nullptr);
  };
  SampleResult res = sample_loop(st.cfg.model, st.schedule, req, denoise);
  if (req.use_ema)
    for (size_t i = 0; i < st.model.pf.params.size(); ++i)
      st.model.pf.params[i].second.data() = std::move(saved[i]);
  return res;
}

// ---------------------------------------------------------------------------
// figure-layout mosaic: [C,4,h,w] -> [C,2h,2w]
//   top-left ll (own min/max), top-right lh, bottom-left hl, bottom-right hh
// high subbands share one symmetric scale so 0 maps to mid-gray everywhere

inline Tensor<float> export_wavelet_grid(const Tensor<float>& stack) {
  if (stack.rank() != 4 || stack.dim(1) != 4)
    fail("export_wavelet_grid: expected [C,4,h,w], got " + shape_str(stack.shape()));
  const int64_t C = stack.dim(0), h = stack.dim(2), w = stack.dim(3), hw = h * w;
  Tensor<float> out = Tensor<float>::zeros({C, 2 * h, 2 * w});

  double ll_min = 1e30, ll_max = -1e30, hi_absmax = 0.0;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t s = 0; s < 4; ++s)
      for (int64_t i = 0; i < hw; ++i) {
        const double v = stack.data()[(c * 4 + s) * hw + i];
        if (s == 0) {
          ll_min = std::min(ll_min, v);
          ll_max = std::max(ll_max, v);
        } else {
          hi_absmax = std::max(hi_absmax, std::abs(v));
        }
      }
  const double ll_range = ll_max - ll_min;

  const int64_t corner[4][2] = {{0, 0}, {0, w}, {h, 0}, {h, w}};  // ll, lh, hl, hh
  for (int64_t c = 0; c < C; ++c)
    for (int64_t s = 0; s < 4; ++s)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          const double v = stack.data()[((c * 4 + s) * h + i) * w + j];
          double mapped;
          if (s == 0) {
            mapped = ll_range > 0 ? 2.0 * (v - ll_min) / ll_range - 1.0 : 0.0;
          } else {
            mapped = hi_absmax > 0 ? v / hi_absmax : 0.0;
          }
          out.data()[(c * 2 * h + corner[s][0] + i) * 2 * w + corner[s][1] + j] =
              static_cast<float>(mapped);
        }
  return out;
}

}  // namespace sfunet
