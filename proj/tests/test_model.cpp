#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sfunet/gradcheck.hpp"
#include "sfunet/model.hpp"

using namespace sfunet;

namespace {

ModelConfig toy_config(Variant v = Variant::Sfunet) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.base_channels = 16;
  cfg.channel_mult = {1, 2};
  cfg.blocks_per_stage = 1;
  cfg.attention_resolutions = {4};
  cfg.num_heads = 4;
  cfg.dropout = 0.1;
  cfg.in_channels = 3;
  cfg.image_size = 16;  // wavelet space 8x8, ladder {8, 4}
  return cfg;
}

ModelConfig res256_config(int64_t c) {
  ModelConfig cfg;
  cfg.variant = Variant::Sfunet;
  cfg.base_channels = c;
  cfg.channel_mult = {1, 1, 2, 2, 4, 4};
  cfg.blocks_per_stage = 2;
  cfg.attention_resolutions = {16};
  cfg.num_heads = 1;
  cfg.image_size = 256;
  return cfg;
}

}  // namespace

TEST_CASE("toy sfunet parameter count matches an independent per-layer sum") {
  // spreadsheet-style walk over the toy architecture (c=16, mult {1,2},
  // 1 block/stage, spatial+frequency attention at resolution 4)
  auto gn = [](int64_t ch) { return 2 * ch; };
  auto factored_stage = [&](int64_t in, int64_t out) {
    const int64_t m = midplanes(in, out, 3, 3);
    return gn(in) + m * in * 9 + m + gn(m) + out * m * 3 + out;
  };
  auto resblock = [&](int64_t in, int64_t out) {
    int64_t n = factored_stage(in, out);      // stage1
    n += 64 * out + out;                      // emb projection, emb_dim = 4*16
    n += factored_stage(out, out);            // stage2
    if (in != out) n += in * out + out;       // 1x1x1 skip
    return n;
  };
  auto attn_pair = [&](int64_t ch) {
    const int64_t one = gn(ch) + 3 * ch * ch + 3 * ch + ch * ch + ch;
    return 2 * one;  // spatial + frequency
  };

  int64_t total = 0;
  total += 64 * 16 + 64 + 64 * 64 + 64;      // time_embed MLP
  total += 16 * 3 * 9 + 16;                  // in_conv (1,3,3)
  total += resblock(16, 16);                 // enc.0.block.0 at res 8, no attention
  total += 16 * 16 * 9 + 16;                 // enc.0.down
  total += resblock(16, 32) + attn_pair(32); // enc.1.block.0 at res 4
  total += resblock(32, 32) + attn_pair(32) + resblock(32, 32);  // middle
  total += resblock(64, 32) + attn_pair(32); // dec.1.block.0 (skip 32)
  total += resblock(48, 32) + attn_pair(32); // dec.1.block.1 (skip 16)
  total += 32 * 32 * 9 + 32;                 // dec.1.up
  total += resblock(48, 16);                 // dec.0.block.0 (skip 16), res 8
  total += resblock(32, 16);                 // dec.0.block.1 (skip from in_conv)
  total += gn(16);                           // out_norm
  total += 3 * 16 * 9 + 3;                   // out_conv

  CHECK(planned_param_count<float>(toy_config()) == total);

  RngState rng(1);
  auto built = build_model<float>(toy_config(), &rng);
  CHECK(built.param_count() == total);
}

TEST_CASE("toy model builds and forward preserves shape") {
  RngState rng(2);
  auto m = build_model<float>(toy_config(), &rng);
  auto x = Tensor<float>::randn(rng, {2, 3, 4, 8, 8});
  NoGradGuard ng;
  auto y = m.forward(x, {3, 7});
  CHECK(y.shape() == x.shape());
  CHECK_THROWS_AS(m.forward(Tensor<float>::randn(rng, {2, 3, 8, 8}), {1, 2}), std::runtime_error);
  CHECK_THROWS_AS(m.forward(x, {1}), std::runtime_error);
}

TEST_CASE("eval-mode forward is deterministic and zero at init") {
  RngState rng(3);
  auto m = build_model<float>(toy_config(), &rng);
  auto x = Tensor<float>::rand_uniform(rng, {1, 3, 4, 8, 8}, -3.0f, 3.0f);
  NoGradGuard ng;
  auto y1 = m.forward(x, {5});
  auto y2 = m.forward(x, {5});
  CHECK(bit_fingerprint(y1) == bit_fingerprint(y2));
  for (float v : y1.data()) CHECK(std::isfinite(v));
  // zero-initialized output conv: prediction is exactly zero at init
  for (float v : y1.data()) CHECK(v == 0.0f);
}

TEST_CASE("model gradient vs finite differences on a probe parameter") {
  RngState rng(4);
  ModelConfig cfg = toy_config();
  cfg.base_channels = 8;
  cfg.num_heads = 2;
  cfg.dropout = 0.0;
  auto m = build_model<double>(cfg, &rng);
  // zero-init layers would zero out most of the graph; give them signal
  for (auto& [name, t] : m.pf.params)
    if (!t.data().empty() && name.find("out_conv") == std::string::npos) {
      bool all_zero = true;
      for (double v : t.data()) all_zero = all_zero && v == 0.0;
      if (all_zero)
        for (auto& v : t.data()) v = rng.normal() * 0.05;
    }
  auto x = Tensor<double>::randn(rng, {1, 3, 4, 4, 4});
  auto fn = [&] {
    auto y = m.forward(x, {2});
    return mean_all(mul(y, y));
  };
  // probe a few parameters spread across the net (full sweep is O(hours))
  for (const char* probe : {"in_conv.weight", "mid.res1.stage1.conv2.weight",
                            "enc.1.block.0.attn_freq.qkv.weight", "out_conv.bias",
                            "time_embed.fc1.weight", "dec.0.block.1.res.emb.weight"}) {
    Tensor<double> p;
    for (auto& [name, t] : m.pf.params)
      if (name == probe) p = t;
    REQUIRE(p.numel() > 0);
    auto res = grad_check(fn, {p});
    CHECK_MESSAGE(res.ok, probe, ": ", res.worst, " rel=", res.max_rel_err);
  }
}

TEST_CASE("variant parameter lattice") {
  ModelConfig base = toy_config();
  base.base_channels = 64;  // parity bound needs realistic channel counts
  auto count = [&](Variant v) {
    ModelConfig cfg = base;
    cfg.variant = v;
    return planned_param_count<float>(cfg);
  };
  const int64_t spatial = count(Variant::SpatialOnly);
  const int64_t freqconv = count(Variant::SpatialPlusFreqConv);
  const int64_t freqattn = count(Variant::SpatialPlusFreqAttn);
  const int64_t sfunet = count(Variant::Sfunet);
  const int64_t full3d = count(Variant::Full3D);
  CHECK(spatial < freqconv);
  CHECK(spatial < freqattn);
  CHECK(freqconv < sfunet);
  CHECK(freqattn < sfunet);
  CHECK(sfunet < full3d);
}

TEST_CASE("factored stages stay within 1% of the full-3D filter budget at production scale") {
  auto plan = build_model<float>(res256_config(128), nullptr);
  auto check_stage = [](const ConvStage<float>& s) {
    if (s.flavor != ConvFlavor::Factored) return;
    const int64_t full = s.in_ch * s.out_ch * 27;
    const int64_t fac = s.filter_param_count();
    CHECK(fac <= full);
    CHECK(static_cast<double>(fac) / static_cast<double>(full) >= 0.99);
  };
  for (const auto& lvl : plan.enc)
    for (const auto& b : lvl.blocks) {
      check_stage(b.res.stage1);
      check_stage(b.res.stage2);
    }
  for (const auto& lvl : plan.dec)
    for (const auto& b : lvl.blocks) {
      check_stage(b.res.stage1);
      check_stage(b.res.stage2);
    }
  check_stage(plan.mid_res1.stage1);
  check_stage(plan.mid_res2.stage2);
}

TEST_CASE("256-res sfunet plans land near the reference sizes") {
  const double c128 = static_cast<double>(planned_param_count<float>(res256_config(128)));
  const double c64 = static_cast<double>(planned_param_count<float>(res256_config(64)));
  const double c192 = static_cast<double>(planned_param_count<float>(res256_config(192)));
  CHECK(std::abs(c128 - 291.31e6) / 291.31e6 < 0.05);
  CHECK(std::abs(c64 - 73.10e6) / 73.10e6 < 0.05);
  CHECK(std::abs(c192 - 665.35e6) / 665.35e6 < 0.05);
  CHECK(c192 / c128 > 2.1);
  CHECK(c192 / c128 < 2.4);

  ModelConfig full = res256_config(128);
  full.variant = Variant::Full3D;
  CHECK(c128 < static_cast<double>(planned_param_count<float>(full)));
}

TEST_CASE("cifar-style and 256-style configs validate") {
  ModelConfig cifar;
  cifar.variant = Variant::Sfunet;
  cifar.base_channels = 128;
  cifar.channel_mult = {1, 2, 2, 2};
  cifar.blocks_per_stage = 3;
  cifar.attention_resolutions = {16, 8};
  cifar.num_heads = 4;
  cifar.image_size = 32;
  CHECK_NOTHROW(cifar.validate());
  // wavelet ladder for 32px input is {16,8,4,2}
  CHECK(cifar.input_spatial() == 16);

  CHECK_NOTHROW(res256_config(128).validate());

  ModelConfig bad = cifar;
  bad.attention_resolutions = {32};
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("attention resolution"),
                       std::runtime_error);
  bad = cifar;
  bad.channel_mult = {};
  bad.dropout = 1.5;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("channel_mult"), std::runtime_error);
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("dropout"), std::runtime_error);
}

TEST_CASE("2d variants force their channel counts") {
  ModelConfig cc = toy_config(Variant::Concat2D);
  CHECK(cc.model_io_channels() == 12);
  CHECK(cc.input_spatial() == 8);
  ModelConfig px = toy_config(Variant::Pixel2D);
  px.attention_resolutions = {8};
  CHECK(px.model_io_channels() == 3);
  CHECK(px.input_spatial() == 16);

  RngState rng(5);
  auto mc = build_model<float>(cc, &rng);
  NoGradGuard ng;
  auto yc = mc.forward(Tensor<float>::randn(rng, {2, 12, 8, 8}), {1, 2});
  CHECK(yc.shape() == Shape{2, 12, 8, 8});

  auto mp = build_model<float>(px, &rng);
  auto yp = mp.forward(Tensor<float>::randn(rng, {1, 3, 16, 16}), {9});
  CHECK(yp.shape() == Shape{1, 3, 16, 16});
}

TEST_CASE("every 5D variant builds and runs forward") {
  RngState rng(8);
  for (Variant v : {Variant::SpatialOnly, Variant::SpatialPlusFreqConv,
                    Variant::SpatialPlusFreqAttn, Variant::Full3D}) {
    auto m = build_model<float>(toy_config(v), &rng);
    NoGradGuard ng;
    auto x = Tensor<float>::randn(rng, {1, 3, 4, 8, 8});
    auto y = m.forward(x, {4});
    CHECK(y.shape() == x.shape());
    for (float val : y.data()) CHECK(std::isfinite(val));
  }
}

TEST_CASE("rebuilding from the same config yields the identical name table") {
  RngState rng1(6), rng2(6);
  auto a = build_model<float>(toy_config(), &rng1);
  auto b = build_model<float>(toy_config(), &rng2);
  REQUIRE(a.pf.params.size() == b.pf.params.size());
  for (size_t i = 0; i < a.pf.params.size(); ++i) {
    CHECK(a.pf.params[i].first == b.pf.params[i].first);
    CHECK(a.pf.params[i].second.shape() == b.pf.params[i].second.shape());
    CHECK(a.pf.params[i].second.data() == b.pf.params[i].second.data());
  }
  // no orphans: every parameter reachable by a dotted name
  for (const auto& [name, t] : a.pf.params) CHECK(name.find('.') != std::string::npos);
}

TEST_CASE("invalid configs report all violations at once") {
  ModelConfig bad = toy_config();
  bad.blocks_per_stage = 0;
  bad.num_heads = 0;
  try {
    bad.validate();
    CHECK(false);
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("blocks_per_stage") != std::string::npos);
    CHECK(msg.find("num_heads") != std::string::npos);
  }
}
