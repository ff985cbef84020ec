#pragma once

// Declarative model assembly: encoder-middle-decoder U-Net with variant
// gates for the ablation family. The same construction path serves both the
// real build (rng provided, parameters materialized) and shape-only planning
// (rng == nullptr), so parameter counts always agree with built models.
//
// Variants:
//   sfunet                factored conv + spatial & frequency attention
//   spatial_only          per-slice spatial conv + spatial attention
//   spatial_plus_freqconv factored conv + spatial attention
//   spatial_plus_freqattn per-slice spatial conv + spatial & frequency attn
//   full3d                3x3x3 conv + all-position attention, full-3D
//                         resampling and stem convs
//   concat2d              2D U-Net over [B,4C,H/2,W/2] subband concatenation
//   pixel2d               2D U-Net over [B,C,H,W] pixels

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sfunet/layers.hpp"

namespace sfunet {

enum class Variant {
  Sfunet,
  SpatialOnly,
  SpatialPlusFreqConv,
  SpatialPlusFreqAttn,
  Full3D,
  Concat2D,
  Pixel2D,
};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Sfunet: return "sfunet";
    case Variant::SpatialOnly: return "spatial_only";
    case Variant::SpatialPlusFreqConv: return "spatial_plus_freqconv";
    case Variant::SpatialPlusFreqAttn: return "spatial_plus_freqattn";
    case Variant::Full3D: return "full3d";
    case Variant::Concat2D: return "concat2d";
    case Variant::Pixel2D: return "pixel2d";
  }
  fail("unreachable");
}

inline Variant variant_from(const std::string& s) {
  for (Variant v : {Variant::Sfunet, Variant::SpatialOnly, Variant::SpatialPlusFreqConv,
                    Variant::SpatialPlusFreqAttn, Variant::Full3D, Variant::Concat2D,
                    Variant::Pixel2D})
    if (to_string(v) == s) return v;
  fail("unknown variant '" + s + "'");
}

struct ModelConfig {
  Variant variant = Variant::Sfunet;
  int64_t base_channels = 128;
  std::vector<int64_t> channel_mult = {1, 1, 2, 2, 4, 4};
  int64_t blocks_per_stage = 2;
  std::set<int64_t> attention_resolutions = {16};
  int64_t num_heads = 1;
  double dropout = 0.1;
  int64_t in_channels = 3;   // image channels before any transform
  int64_t image_size = 256;  // pixel resolution (H = W)

  bool uses_wavelet_5d() const {
    return variant != Variant::Concat2D && variant != Variant::Pixel2D;
  }
  // channels entering / leaving the network
  int64_t model_io_channels() const {
    return variant == Variant::Concat2D ? 4 * in_channels : in_channels;
  }
  // spatial extent the network operates at
  int64_t input_spatial() const {
    return variant == Variant::Pixel2D ? image_size : image_size / 2;
  }

  void validate() const {
    std::vector<std::string> bad;
    if (base_channels < 1) bad.push_back("base_channels must be positive");
    if (channel_mult.empty()) bad.push_back("channel_mult must be non-empty");
    for (int64_t m : channel_mult)
      if (m < 1) bad.push_back("channel multipliers must be positive");
    if (blocks_per_stage < 1) bad.push_back("blocks_per_stage must be positive");
    if (num_heads < 1) bad.push_back("num_heads must be positive");
    if (dropout < 0.0 || dropout >= 1.0) bad.push_back("dropout must be in [0,1)");
    if (in_channels < 1) bad.push_back("in_channels must be positive");
    if (image_size < 2 || image_size % 2) bad.push_back("image_size must be even and >= 2");
    std::set<int64_t> ladder;
    int64_t res = input_spatial();
    for (size_t i = 0; i < channel_mult.size(); ++i) {
      ladder.insert(res);
      if (i + 1 < channel_mult.size()) {
        if (res % 2) bad.push_back("resolution ladder hits odd size " + std::to_string(res));
        res /= 2;
      }
      if (res < 1) bad.push_back("too many stages for image_size");
    }
    for (int64_t r : attention_resolutions)
      if (!ladder.count(r))
        bad.push_back("attention resolution " + std::to_string(r) +
                      " not reachable by the stage ladder");
    if (!bad.empty()) {
      std::string msg = "invalid model config:";
      for (const auto& b : bad) msg += "\n  - " + b;
      fail(msg);
    }
  }

  ConvFlavor conv_flavor() const {
    switch (variant) {
      case Variant::Sfunet:
      case Variant::SpatialPlusFreqConv:
        return ConvFlavor::Factored;
      case Variant::Full3D:
        return ConvFlavor::Full3D;
      default:
        return ConvFlavor::Spatial;
    }
  }

  std::vector<AttnMode> attn_modes() const {
    switch (variant) {
      case Variant::Sfunet:
      case Variant::SpatialPlusFreqAttn:
        return {AttnMode::Spatial, AttnMode::Frequency};
      case Variant::Full3D:
        return {AttnMode::All};
      default:
        return {AttnMode::Spatial};
    }
  }
};

inline std::string attn_suffix(AttnMode m) {
  switch (m) {
    case AttnMode::Spatial: return "attn_spatial";
    case AttnMode::Frequency: return "attn_freq";
    case AttnMode::All: return "attn_all";
  }
  fail("unreachable");
}

template <typename T>
struct Model {
  ModelConfig cfg;
  ParamFactory<T> pf;

  TimeEmbed<T> time_embed;
  Tensor<T> in_w, in_b;

  struct Block {
    ResBlockLayer<T> res;
    std::vector<AttentionBlock<T>> attns;
  };
  struct EncLevel {
    std::vector<Block> blocks;
    std::optional<Downsample<T>> down;
  };
  struct DecLevel {
    std::vector<Block> blocks;
    std::optional<Upsample<T>> up;
  };
  std::vector<EncLevel> enc;
  ResBlockLayer<T> mid_res1, mid_res2;
  std::vector<AttentionBlock<T>> mid_attns;
  std::vector<DecLevel> dec;
  GroupNormLayer<T> out_norm;
  Tensor<T> out_w, out_b;

  bool materialized() const { return pf.rng != nullptr || pf.params.empty(); }

  int64_t param_count() const { return pf.total_count(); }

  // counts grouped by the leading name component ("enc.0", "mid", ...)
  std::map<std::string, int64_t> param_breakdown() const {
    std::map<std::string, int64_t> by;
    for (const auto& [name, t] : pf.params) {
      size_t dot = name.find('.');
      std::string head = name.substr(0, dot);
      if ((head == "enc" || head == "dec") && dot != std::string::npos) {
        size_t dot2 = name.find('.', dot + 1);
        head = name.substr(0, dot2);
      }
      by[head] += t.numel();
    }
    return by;
  }

  Tensor<T> forward(const Tensor<T>& x, const std::vector<int64_t>& ts,
                    bool train = false, RngState* rng = nullptr) const {
    const bool is_5d = cfg.uses_wavelet_5d();
    Tensor<T> h;
    if (is_5d) {
      if (x.rank() != 5 || x.dim(1) != cfg.model_io_channels() || x.dim(2) != 4)
        fail("model: variant " + to_string(cfg.variant) + " expects [B," +
             std::to_string(cfg.model_io_channels()) + ",4,s,s], got " + shape_str(x.shape()));
      h = x;
    } else {
      if (x.rank() != 4 || x.dim(1) != cfg.model_io_channels())
        fail("model: variant " + to_string(cfg.variant) + " expects [B," +
             std::to_string(cfg.model_io_channels()) + ",H,W], got " + shape_str(x.shape()));
      h = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)});
    }
    if (static_cast<int64_t>(ts.size()) != x.dim(0))
      fail("model: need one timestep per example");

    const Conv3 stem_pad = cfg.variant == Variant::Full3D ? Conv3{1, 1, 1} : Conv3{0, 1, 1};
    Tensor<T> emb = time_embed.forward(ts);
    h = conv5d(h, in_w, in_b, {1, 1, 1}, stem_pad);

    std::vector<Tensor<T>> skips{h};
    for (const auto& level : enc) {
      for (const auto& block : level.blocks) {
        h = block.res.forward(h, emb, train, rng);
        for (const auto& a : block.attns) h = a.forward(h);
        skips.push_back(h);
      }
      if (level.down) {
        h = level.down->forward(h);
        skips.push_back(h);
      }
    }

    h = mid_res1.forward(h, emb, train, rng);
    for (const auto& a : mid_attns) h = a.forward(h);
    h = mid_res2.forward(h, emb, train, rng);

    for (const auto& level : dec) {
      for (const auto& block : level.blocks) {
        Tensor<T> skip = skips.back();
        skips.pop_back();
        h = block.res.forward(concat<T>({h, skip}, 1), emb, train, rng);
        for (const auto& a : block.attns) h = a.forward(h);
      }
      if (level.up) h = level.up->forward(h);
    }
    if (!skips.empty()) fail("model: unconsumed skip connections");

    h = conv5d(silu(out_norm.forward(h)), out_w, out_b, {1, 1, 1}, stem_pad);
    if (!is_5d) return reshape(h, {h.dim(0), h.dim(1), h.dim(3), h.dim(4)});
    return h;
  }
};

// rng == nullptr plans shapes without allocating parameter data
template <typename T>
Model<T> build_model(const ModelConfig& cfg, RngState* rng) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;
  m.pf.rng = rng;
  auto& pf = m.pf;

  const int64_t c = cfg.base_channels;
  const int64_t emb_dim = 4 * c;
  const int64_t io_ch = cfg.model_io_channels();
  const ConvFlavor flavor = cfg.conv_flavor();
  const bool full = cfg.variant == Variant::Full3D;
  const auto modes = cfg.attn_modes();
  const int64_t levels = static_cast<int64_t>(cfg.channel_mult.size());

  m.time_embed = TimeEmbed<T>(pf, "time_embed", c, emb_dim);
  const Shape stem = full ? Shape{c, io_ch, 3, 3, 3} : Shape{c, io_ch, 1, 3, 3};
  m.in_w = pf.create("in_conv.weight", stem, Init::FanInUniform);
  m.in_b = pf.create("in_conv.bias", {c}, Init::Zero);

  auto add_attns = [&](std::vector<AttentionBlock<T>>& dst, const std::string& prefix,
                       int64_t ch) {
    for (AttnMode mode : modes)
      dst.emplace_back(pf, prefix + "." + attn_suffix(mode), mode, ch, cfg.num_heads);
  };

  int64_t ch = c;
  int64_t res = cfg.input_spatial();
  std::vector<int64_t> skip_chs{ch};
  for (int64_t lvl = 0; lvl < levels; ++lvl) {
    typename Model<T>::EncLevel level;
    const int64_t out_ch = cfg.channel_mult[static_cast<size_t>(lvl)] * c;
    for (int64_t i = 0; i < cfg.blocks_per_stage; ++i) {
      const std::string prefix = "enc." + std::to_string(lvl) + ".block." + std::to_string(i);
      typename Model<T>::Block block;
      block.res = ResBlockLayer<T>(pf, prefix + ".res", flavor, ch, out_ch, emb_dim, cfg.dropout);
      ch = out_ch;
      if (cfg.attention_resolutions.count(res)) add_attns(block.attns, prefix, ch);
      level.blocks.push_back(std::move(block));
      skip_chs.push_back(ch);
    }
    if (lvl + 1 < levels) {
      level.down = Downsample<T>(pf, "enc." + std::to_string(lvl) + ".down", ch, full);
      skip_chs.push_back(ch);
      res /= 2;
    }
    m.enc.push_back(std::move(level));
  }

  m.mid_res1 = ResBlockLayer<T>(pf, "mid.res1", flavor, ch, ch, emb_dim, cfg.dropout);
  add_attns(m.mid_attns, "mid", ch);
  m.mid_res2 = ResBlockLayer<T>(pf, "mid.res2", flavor, ch, ch, emb_dim, cfg.dropout);

  for (int64_t lvl = levels - 1; lvl >= 0; --lvl) {
    typename Model<T>::DecLevel level;
    const int64_t out_ch = cfg.channel_mult[static_cast<size_t>(lvl)] * c;
    for (int64_t i = 0; i < cfg.blocks_per_stage + 1; ++i) {
      const std::string prefix = "dec." + std::to_string(lvl) + ".block." + std::to_string(i);
      const int64_t skip_ch = skip_chs.back();
      skip_chs.pop_back();
      typename Model<T>::Block block;
      block.res = ResBlockLayer<T>(pf, prefix + ".res", flavor, ch + skip_ch, out_ch, emb_dim,
                                   cfg.dropout);
      ch = out_ch;
      if (cfg.attention_resolutions.count(res)) add_attns(block.attns, prefix, ch);
      level.blocks.push_back(std::move(block));
    }
    if (lvl > 0) {
      level.up = Upsample<T>(pf, "dec." + std::to_string(lvl) + ".up", ch, full);
      res *= 2;
    }
    m.dec.push_back(std::move(level));
  }
  if (!skip_chs.empty()) fail("model build: skip bookkeeping out of balance");

  m.out_norm = GroupNormLayer<T>(pf, "out_norm", ch);
  const Shape out_shape = full ? Shape{io_ch, ch, 3, 3, 3} : Shape{io_ch, ch, 1, 3, 3};
  m.out_w = pf.create("out_conv.weight", out_shape, Init::Zero);
  m.out_b = pf.create("out_conv.bias", {io_ch}, Init::Zero);
  return m;
}

template <typename T>
int64_t planned_param_count(const ModelConfig& cfg) {
  return build_model<T>(cfg, nullptr).param_count();
}

}  // namespace sfunet
