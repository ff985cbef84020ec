#pragma once

// Building blocks for the denoising U-Net over 5D [B,C,F,H,W] wavelet data:
//   - ConvStage: pre-activated conv unit in three flavors
//       spatial   norm,SiLU,conv(1,3,3)            (per-frequency-slice 2D)
//       factored  norm,SiLU,conv(1,3,3) Cin->M, norm,SiLU,conv(3,1,1) M->Cout
//       full3d    norm,SiLU,conv(3,3,3)
//     The factored midplane count M matches the parameter budget of the full
//     3D filter bank.
//   - AttentionBlock: QKV self-attention with the sequence axis chosen by
//     permutation - spatial (F folded into batch), frequency (positions
//     folded into batch), or all (F*s1*s2 flattened).
//   - ResBlock: two ConvStages with timestep-embedding injection, dropout
//     before the second stage, zero-initialized last conv, and a 1x1x1 skip
//     projection when channel counts differ.
//   - Downsample/Upsample: spatial-only resampling; the frequency axis keeps
//     its extent.
//
// Parameters are registered under dotted names so checkpoints are stable.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfunet/conv.hpp"
#include "sfunet/tensor.hpp"

namespace sfunet {

// M = floor(Nin*Nout*f*k^2 / (Nin*k^2 + f*Nout))
inline int64_t midplanes(int64_t n_in, int64_t n_out, int64_t f, int64_t k) {
  if (n_in <= 0 || n_out <= 0 || f <= 0 || k <= 0) fail("midplanes: all arguments must be positive");
  return (n_in * n_out * f * k * k) / (n_in * k * k + f * n_out);
}

enum class Init { FanInUniform, Zero, One };

template <typename T>
struct ParamFactory {
  RngState* rng = nullptr;  // null -> shape-only planning, no allocation
  std::vector<std::pair<std::string, Tensor<T>>> params;

  Tensor<T> create(const std::string& name, const Shape& shape, Init init) {
    Tensor<T> t;
    if (rng == nullptr) {
      t = Tensor<T>::placeholder(shape);
    } else {
      switch (init) {
        case Init::Zero: t = Tensor<T>::zeros(shape); break;
        case Init::One: t = Tensor<T>::full(shape, T(1)); break;
        case Init::FanInUniform: {
          int64_t fan = 1;
          for (size_t i = 1; i < shape.size(); ++i) fan *= shape[i];
          const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan)));
          t = Tensor<T>::rand_uniform(*rng, shape, -bound, bound);
          break;
        }
      }
      t.set_requires_grad(true);
    }
    params.emplace_back(name, t);
    return t;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
  }
};

template <typename T>
struct GroupNormLayer {
  int groups = 1;
  Tensor<T> gamma, beta;

  GroupNormLayer() = default;
  GroupNormLayer(ParamFactory<T>& pf, const std::string& prefix, int64_t channels) {
    groups = group_count(channels);
    gamma = pf.create(prefix + ".gamma", {channels}, Init::One);
    beta = pf.create(prefix + ".beta", {channels}, Init::Zero);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return group_norm(x, groups, gamma, beta); }
};

enum class ConvFlavor { Spatial, Factored, Full3D };

template <typename T>
struct ConvStage {
  ConvFlavor flavor = ConvFlavor::Spatial;
  int64_t in_ch = 0, out_ch = 0, mid_ch = 0;
  GroupNormLayer<T> norm1, norm2;
  Tensor<T> w1, b1, w2, b2;

  ConvStage() = default;
  ConvStage(ParamFactory<T>& pf, const std::string& prefix, ConvFlavor fl,
            int64_t in, int64_t out, bool zero_init_last)
      : flavor(fl), in_ch(in), out_ch(out) {
    norm1 = GroupNormLayer<T>(pf, prefix + ".norm1", in);
    const Init last = zero_init_last ? Init::Zero : Init::FanInUniform;
    switch (flavor) {
      case ConvFlavor::Spatial:
        w1 = pf.create(prefix + ".conv1.weight", {out, in, 1, 3, 3}, last);
        b1 = pf.create(prefix + ".conv1.bias", {out}, Init::Zero);
        break;
      case ConvFlavor::Full3D:
        w1 = pf.create(prefix + ".conv1.weight", {out, in, 3, 3, 3}, last);
        b1 = pf.create(prefix + ".conv1.bias", {out}, Init::Zero);
        break;
      case ConvFlavor::Factored:
        mid_ch = midplanes(in, out, 3, 3);
        w1 = pf.create(prefix + ".conv1.weight", {mid_ch, in, 1, 3, 3}, Init::FanInUniform);
        b1 = pf.create(prefix + ".conv1.bias", {mid_ch}, Init::Zero);
        norm2 = GroupNormLayer<T>(pf, prefix + ".norm2", mid_ch);
        w2 = pf.create(prefix + ".conv2.weight", {out, mid_ch, 3, 1, 1}, last);
        b2 = pf.create(prefix + ".conv2.bias", {out}, Init::Zero);
        break;
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = silu(norm1.forward(x));
    switch (flavor) {
      case ConvFlavor::Spatial:
        return conv5d(h, w1, b1, {1, 1, 1}, {0, 1, 1});
      case ConvFlavor::Full3D:
        return conv5d(h, w1, b1, {1, 1, 1}, {1, 1, 1});
      case ConvFlavor::Factored: {
        h = conv5d(h, w1, b1, {1, 1, 1}, {0, 1, 1});
        h = silu(norm2.forward(h));
        return conv5d(h, w2, b2, {1, 1, 1}, {1, 0, 0});
      }
    }
    fail("unreachable");
  }

  // weights only, excluding norms and biases (the filter-bank budget)
  int64_t filter_param_count() const {
    if (flavor == ConvFlavor::Factored) return w1.numel() + w2.numel();
    return w1.numel();
  }
};

enum class AttnMode { Spatial, Frequency, All };

template <typename T>
struct AttentionBlock {
  AttnMode mode = AttnMode::Spatial;
  int64_t channels = 0, heads = 1;
  GroupNormLayer<T> norm;
  Tensor<T> qkv_w, qkv_b, proj_w, proj_b;

  AttentionBlock() = default;
  AttentionBlock(ParamFactory<T>& pf, const std::string& prefix, AttnMode m,
                 int64_t ch, int64_t num_heads)
      : mode(m), channels(ch), heads(num_heads) {
    if (ch % num_heads != 0)
      fail("attention: channels " + std::to_string(ch) + " not divisible by " +
           std::to_string(num_heads) + " heads");
    norm = GroupNormLayer<T>(pf, prefix + ".norm", ch);
    qkv_w = pf.create(prefix + ".qkv.weight", {3 * ch, ch}, Init::FanInUniform);
    qkv_b = pf.create(prefix + ".qkv.bias", {3 * ch}, Init::Zero);
    proj_w = pf.create(prefix + ".proj.weight", {ch, ch}, Init::Zero);
    proj_b = pf.create(prefix + ".proj.bias", {ch}, Init::Zero);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 5 || x.dim(1) != channels)
      fail("attention: expected [B," + std::to_string(channels) + ",F,s1,s2], got " +
           shape_str(x.shape()));
    const int64_t B = x.dim(0), C = x.dim(1), F = x.dim(2), s1 = x.dim(3), s2 = x.dim(4);
    Tensor<T> xs;
    switch (mode) {
      case AttnMode::Spatial:
        xs = reshape(permute(x, {0, 2, 1, 3, 4}), {B * F, C, s1 * s2});
        break;
      case AttnMode::Frequency:
        xs = reshape(permute(x, {0, 3, 4, 1, 2}), {B * s1 * s2, C, F});
        break;
      case AttnMode::All:
        xs = reshape(x, {B, C, F * s1 * s2});
        break;
    }
    const int64_t G = xs.dim(0), L = xs.dim(2);
    Tensor<T> h = norm.forward(xs);
    Tensor<T> qkv = channel_linear(h, qkv_w, qkv_b);               // [G, 3C, L]
    qkv = reshape(qkv, {G * heads, 3 * (C / heads), L});           // per-head q|k|v blocks
    auto parts = split(qkv, 1, 3);
    const T scale = static_cast<T>(1.0 / std::sqrt(std::sqrt(static_cast<double>(C / heads))));
    Tensor<T> q = mul(parts[0], scale);
    Tensor<T> k = mul(parts[1], scale);
    Tensor<T> w = softmax(matmul(permute(q, {0, 2, 1}), k), 2);    // [Gh, L, L], rows sum to 1
    Tensor<T> att = matmul(parts[2], permute(w, {0, 2, 1}));       // [Gh, C/h, L]
    Tensor<T> out = channel_linear(reshape(att, {G, C, L}), proj_w, proj_b);
    Tensor<T> y = add(xs, out);
    switch (mode) {
      case AttnMode::Spatial:
        return permute(reshape(y, {B, F, C, s1, s2}), {0, 2, 1, 3, 4});
      case AttnMode::Frequency:
        return permute(reshape(y, {B, s1, s2, C, F}), {0, 3, 4, 1, 2});
      case AttnMode::All:
        return reshape(y, {B, C, F, s1, s2});
    }
    fail("unreachable");
  }
};

template <typename T>
struct ResBlockLayer {
  int64_t in_ch = 0, out_ch = 0;
  double dropout_p = 0.0;
  ConvStage<T> stage1, stage2;
  Tensor<T> emb_w, emb_b;
  bool has_skip = false;
  Tensor<T> skip_w, skip_b;

  ResBlockLayer() = default;
  ResBlockLayer(ParamFactory<T>& pf, const std::string& prefix, ConvFlavor flavor,
                int64_t in, int64_t out, int64_t emb_dim, double dropout)
      : in_ch(in), out_ch(out), dropout_p(dropout) {
    stage1 = ConvStage<T>(pf, prefix + ".stage1", flavor, in, out, false);
    emb_w = pf.create(prefix + ".emb.weight", {out, emb_dim}, Init::FanInUniform);
    emb_b = pf.create(prefix + ".emb.bias", {out}, Init::Zero);
    stage2 = ConvStage<T>(pf, prefix + ".stage2", flavor, out, out, true);
    has_skip = in != out;
    if (has_skip) {
      skip_w = pf.create(prefix + ".skip.weight", {out, in, 1, 1, 1}, Init::FanInUniform);
      skip_b = pf.create(prefix + ".skip.bias", {out}, Init::Zero);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& emb, bool train,
                    RngState* rng) const {
    if (x.dim(1) != in_ch)
      fail("resblock: expected " + std::to_string(in_ch) + " channels, got " +
           shape_str(x.shape()));
    Tensor<T> h = stage1.forward(x);
    Tensor<T> e = linear(silu(emb), emb_w, emb_b);
    h = add_channel_bias(h, e);
    if (train && dropout_p > 0.0) {
      if (rng == nullptr) fail("resblock: training forward needs an RNG for dropout");
      h = dropout(h, dropout_p, *rng);
    }
    h = stage2.forward(h);
    Tensor<T> sk = has_skip ? conv5d(x, skip_w, skip_b) : x;
    return add(sk, h);
  }
};

template <typename T>
struct Downsample {
  Tensor<T> w, b;
  bool full3d = false;

  Downsample() = default;
  Downsample(ParamFactory<T>& pf, const std::string& prefix, int64_t ch, bool full)
      : full3d(full) {
    const Shape ks = full ? Shape{ch, ch, 3, 3, 3} : Shape{ch, ch, 1, 3, 3};
    w = pf.create(prefix + ".weight", ks, Init::FanInUniform);
    b = pf.create(prefix + ".bias", {ch}, Init::Zero);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.dim(3) % 2 || x.dim(4) % 2)
      fail("downsample: spatial size must be even, got " + shape_str(x.shape()));
    const Conv3 pad = full3d ? Conv3{1, 1, 1} : Conv3{0, 1, 1};
    return conv5d(x, w, b, {1, 2, 2}, pad);
  }
};

template <typename T>
struct Upsample {
  Tensor<T> w, b;
  bool full3d = false;

  Upsample() = default;
  Upsample(ParamFactory<T>& pf, const std::string& prefix, int64_t ch, bool full)
      : full3d(full) {
    const Shape ks = full ? Shape{ch, ch, 3, 3, 3} : Shape{ch, ch, 1, 3, 3};
    w = pf.create(prefix + ".weight", ks, Init::FanInUniform);
    b = pf.create(prefix + ".bias", {ch}, Init::Zero);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    const Conv3 pad = full3d ? Conv3{1, 1, 1} : Conv3{0, 1, 1};
    return conv5d(upsample_nearest_spatial2(x), w, b, {1, 1, 1}, pad);
  }
};

// sinusoid -> Linear -> SiLU -> Linear ([B] timesteps to [B, emb_dim])
template <typename T>
struct TimeEmbed {
  int64_t model_ch = 0, emb_dim = 0;
  Tensor<T> w1, b1, w2, b2;

  TimeEmbed() = default;
  TimeEmbed(ParamFactory<T>& pf, const std::string& prefix, int64_t ch, int64_t dim)
      : model_ch(ch), emb_dim(dim) {
    w1 = pf.create(prefix + ".fc1.weight", {dim, ch}, Init::FanInUniform);
    b1 = pf.create(prefix + ".fc1.bias", {dim}, Init::Zero);
    w2 = pf.create(prefix + ".fc2.weight", {dim, dim}, Init::FanInUniform);
    b2 = pf.create(prefix + ".fc2.bias", {dim}, Init::Zero);
  }

  Tensor<T> forward(const std::vector<int64_t>& ts) const {
    Tensor<T> e = sinusoidal_embedding<T>(ts, model_ch);
    return linear(silu(linear(e, w1, b1)), w2, b2);
  }
};

}  // namespace sfunet
