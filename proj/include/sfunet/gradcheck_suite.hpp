#pragma once

// The named finite-difference suite behind `sfunet gradcheck` and the
// acceptance gate: every differentiable op and layer, five random instances
// each, double precision, h = 1e-4, max relative error < 1e-3.

#include <functional>
#include <string>
#include <vector>

#include "sfunet/gradcheck.hpp"
#include "sfunet/layers.hpp"
#include "sfunet/model.hpp"
#include "sfunet/wavelet.hpp"

namespace sfunet {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  bool ok = false;
};

namespace detail {

using D = Tensor<double>;

// weighted sum gives every output element influence on the scalar loss
inline D weighted(const D& y, RngState& rng) {
  D w = D::randn(rng, y.shape());
  return sum_all(mul(y, w));
}

}  // namespace detail

inline std::vector<GradCheckCase> run_gradcheck_suite(const std::string& filter = "",
                                                      int instances = 5) {
  using detail::D;
  std::vector<GradCheckCase> results;
  RngState rng(20240);

  auto run = [&](const std::string& name,
                 const std::function<GradCheckResult(RngState&)>& one) {
    if (!filter.empty() && name.find(filter) == std::string::npos) return;
    GradCheckCase c;
    c.name = name;
    c.ok = true;
    for (int i = 0; i < instances; ++i) {
      auto res = one(rng);
      c.max_rel_err = std::max(c.max_rel_err, res.max_rel_err);
      c.ok = c.ok && res.ok;
    }
    results.push_back(c);
  };

  run("add", [](RngState& r) {
    auto a = D::randn(r, {7}), b = D::randn(r, {7}), w = D::randn(r, {7});
    return grad_check([&] { return sum_all(mul(add(a, b), w)); }, {a, b});
  });
  run("sub", [](RngState& r) {
    auto a = D::randn(r, {7}), b = D::randn(r, {7}), w = D::randn(r, {7});
    return grad_check([&] { return sum_all(mul(sub(a, b), w)); }, {a, b});
  });
  run("mul", [](RngState& r) {
    auto a = D::randn(r, {7}), b = D::randn(r, {7});
    return grad_check([&] { return sum_all(mul(a, b)); }, {a, b});
  });
  run("div", [](RngState& r) {
    auto a = D::randn(r, {7});
    auto b = add(D::rand_uniform(r, {7}, 0.5, 1.5), 0.0);
    return grad_check([&] { return sum_all(div(a, b)); }, {a, b});
  });
  run("mul_scalar", [](RngState& r) {
    auto a = D::randn(r, {7});
    return grad_check([&] { return sum_all(mul(a, 1.7)); }, {a});
  });
  run("matmul_batched", [](RngState& r) {
    auto a = D::randn(r, {2, 3, 4}), b = D::randn(r, {2, 4, 3});
    auto w = D::randn(r, {2, 3, 3});
    return grad_check([&] { return sum_all(mul(matmul(a, b), w)); }, {a, b});
  });
  run("softmax", [](RngState& r) {
    auto x = D::randn(r, {3, 5});
    auto w = D::randn(r, {3, 5});
    return grad_check([&] { return sum_all(mul(softmax(x, 1), w)); }, {x});
  });
  run("reshape", [](RngState& r) {
    auto x = D::randn(r, {3, 4});
    auto w = D::randn(r, {12});
    return grad_check([&] { return sum_all(mul(reshape(x, {12}), w)); }, {x});
  });
  run("permute", [](RngState& r) {
    auto x = D::randn(r, {2, 3, 4});
    auto w = D::randn(r, {4, 2, 3});
    return grad_check([&] { return sum_all(mul(permute(x, {2, 0, 1}), w)); }, {x});
  });
  run("concat", [](RngState& r) {
    auto a = D::randn(r, {2, 3}), b = D::randn(r, {2, 2});
    auto w = D::randn(r, {2, 5});
    return grad_check([&] { return sum_all(mul(concat<double>({a, b}, 1), w)); }, {a, b});
  });
  run("split_narrow", [](RngState& r) {
    auto x = D::randn(r, {2, 6});
    auto w = D::randn(r, {2, 3});
    return grad_check([&] { return sum_all(mul(split(x, 1, 2)[1], w)); }, {x});
  });
  run("sum_axis", [](RngState& r) {
    auto x = D::randn(r, {3, 4});
    auto w = D::randn(r, {3});
    return grad_check([&] { return sum_all(mul(sum_axis(x, 1), w)); }, {x});
  });
  run("mean_all", [](RngState& r) {
    auto x = D::randn(r, {9});
    return grad_check([&] { return mean_all(mul(x, x)); }, {x});
  });
  run("sqrt", [](RngState& r) {
    auto x = D::rand_uniform(r, {7}, 0.5, 2.0);
    auto w = D::randn(r, {7});
    return grad_check([&] { return sum_all(mul(sqrt_t(x), w)); }, {x});
  });
  run("exp", [](RngState& r) {
    auto x = D::randn(r, {7});
    auto w = D::randn(r, {7});
    return grad_check([&] { return sum_all(mul(exp_t(x), w)); }, {x});
  });
  run("silu", [](RngState& r) {
    auto x = D::randn(r, {7});
    auto w = D::randn(r, {7});
    return grad_check([&] { return sum_all(mul(silu(x), w)); }, {x});
  });
  run("dropout", [](RngState& r) {
    auto x = D::randn(r, {12});
    auto w = D::randn(r, {12});
    const uint64_t mask_seed = r.next_u64();
    return grad_check(
        [&, mask_seed] {
          RngState mask_rng(mask_seed);
          return sum_all(mul(dropout(x, 0.4, mask_rng), w));
        },
        {x});
  });
  run("group_norm", [](RngState& r) {
    auto x = D::randn(r, {2, 6, 5});
    auto g = D::rand_uniform(r, {6}, 0.5, 1.5);
    auto b = D::randn(r, {6});
    auto w = D::randn(r, {2, 6, 5});
    return grad_check([&] { return sum_all(mul(group_norm(x, 3, g, b), w)); }, {x, g, b});
  });
  run("conv1d", [](RngState& r) {
    auto x = D::randn(r, {2, 3, 6});
    auto wt = D::randn(r, {4, 3, 3});
    auto b = D::randn(r, {4});
    auto w = D::randn(r, {2, 4, 6});
    return grad_check([&] { return sum_all(mul(conv1d(x, wt, b, 1, 1), w)); }, {x, wt, b});
  });
  run("conv2d", [](RngState& r) {
    auto x = D::randn(r, {1, 3, 5, 5});
    auto wt = D::randn(r, {2, 3, 3, 3});
    auto b = D::randn(r, {2});
    auto w = D::randn(r, {1, 2, 5, 5});
    return grad_check([&] { return sum_all(mul(conv2d(x, wt, b, 1, 1), w)); }, {x, wt, b});
  });
  run("conv3d", [](RngState& r) {
    auto x = D::randn(r, {1, 2, 4, 4, 4});
    auto wt = D::randn(r, {3, 2, 3, 3, 3});
    auto b = D::randn(r, {3});
    auto w = D::randn(r, {1, 3, 4, 4, 4});
    return grad_check(
        [&] { return sum_all(mul(conv5d(x, wt, b, {1, 1, 1}, {1, 1, 1}), w)); }, {x, wt, b});
  });
  run("conv_strided", [](RngState& r) {
    auto x = D::randn(r, {1, 2, 4, 6, 6});
    auto wt = D::randn(r, {3, 2, 1, 3, 3});
    auto b = D::randn(r, {3});
    auto w = D::randn(r, {1, 3, 4, 3, 3});
    return grad_check(
        [&] { return sum_all(mul(conv5d(x, wt, b, {1, 2, 2}, {0, 1, 1}), w)); }, {x, wt, b});
  });
  run("avg_pool", [](RngState& r) {
    auto x = D::randn(r, {1, 2, 2, 4, 4});
    auto w = D::randn(r, {1, 2, 2, 2, 2});
    return grad_check([&] { return sum_all(mul(avg_pool_spatial2(x), w)); }, {x});
  });
  run("upsample_nearest", [](RngState& r) {
    auto x = D::randn(r, {1, 2, 2, 3, 3});
    auto w = D::randn(r, {1, 2, 2, 6, 6});
    return grad_check([&] { return sum_all(mul(upsample_nearest_spatial2(x), w)); }, {x});
  });
  run("channel_linear", [](RngState& r) {
    auto x = D::randn(r, {2, 3, 4});
    auto wt = D::randn(r, {5, 3});
    auto b = D::randn(r, {5});
    auto w = D::randn(r, {2, 5, 4});
    return grad_check([&] { return sum_all(mul(channel_linear(x, wt, b), w)); }, {x, wt, b});
  });
  run("add_channel_bias", [](RngState& r) {
    auto x = D::randn(r, {2, 3, 4});
    auto v = D::randn(r, {2, 3});
    auto w = D::randn(r, {2, 3, 4});
    return grad_check([&] { return sum_all(mul(add_channel_bias(x, v), w)); }, {x, v});
  });
  run("dwt", [](RngState& r) {
    auto x = D::randn(r, {1, 2, 4, 4});
    auto w = D::randn(r, {1, 2, 4, 2, 2});
    return grad_check([&] { return sum_all(mul(dwt(x), w)); }, {x});
  });
  run("iwt", [](RngState& r) {
    auto u = D::randn(r, {1, 2, 4, 2, 2});
    auto w = D::randn(r, {1, 2, 4, 4});
    return grad_check([&] { return sum_all(mul(iwt(u), w)); }, {u});
  });
  run("spatfreq_conv", [&](RngState& r) {
    ParamFactory<double> pf;
    pf.rng = &r;
    ConvStage<double> stage(pf, "s", ConvFlavor::Factored, 3, 4, false);
    auto x = D::randn(r, {1, 3, 4, 3, 3});
    auto w = D::randn(r, {1, 4, 4, 3, 3});
    return grad_check([&] { return sum_all(mul(stage.forward(x), w)); },
                      {x, stage.w1, stage.w2, stage.b1, stage.norm1.gamma, stage.norm2.beta});
  });
  run("attention_spatial", [&](RngState& r) {
    ParamFactory<double> pf;
    pf.rng = &r;
    AttentionBlock<double> attn(pf, "a", AttnMode::Spatial, 4, 2);
    for (auto& v : attn.proj_w.data()) v = r.normal() * 0.3;
    auto x = D::randn(r, {1, 4, 2, 2, 2});
    auto w = D::randn(r, {1, 4, 2, 2, 2});
    return grad_check([&] { return sum_all(mul(attn.forward(x), w)); },
                      {x, attn.qkv_w, attn.qkv_b, attn.proj_w, attn.norm.gamma});
  });
  run("attention_frequency", [&](RngState& r) {
    ParamFactory<double> pf;
    pf.rng = &r;
    AttentionBlock<double> attn(pf, "a", AttnMode::Frequency, 4, 2);
    for (auto& v : attn.proj_w.data()) v = r.normal() * 0.3;
    auto x = D::randn(r, {1, 4, 4, 2, 2});
    auto w = D::randn(r, {1, 4, 4, 2, 2});
    return grad_check([&] { return sum_all(mul(attn.forward(x), w)); },
                      {x, attn.qkv_w, attn.proj_w});
  });
  run("attention_all", [&](RngState& r) {
    ParamFactory<double> pf;
    pf.rng = &r;
    AttentionBlock<double> attn(pf, "a", AttnMode::All, 4, 2);
    for (auto& v : attn.proj_w.data()) v = r.normal() * 0.3;
    auto x = D::randn(r, {1, 4, 2, 2, 2});
    auto w = D::randn(r, {1, 4, 2, 2, 2});
    return grad_check([&] { return sum_all(mul(attn.forward(x), w)); },
                      {x, attn.qkv_w, attn.proj_w});
  });
  run("resblock", [&](RngState& r) {
    ParamFactory<double> pf;
    pf.rng = &r;
    ResBlockLayer<double> rb(pf, "rb", ConvFlavor::Factored, 3, 4, 8, 0.0);
    for (auto& v : rb.stage2.w2.data()) v = r.normal() * 0.3;
    auto x = D::randn(r, {1, 3, 4, 2, 2});
    auto e = D::randn(r, {1, 8});
    auto w = D::randn(r, {1, 4, 4, 2, 2});
    return grad_check([&] { return sum_all(mul(rb.forward(x, e, false, nullptr), w)); },
                      {x, e, rb.emb_w, rb.skip_w, rb.stage1.w1, rb.stage2.w1});
  });
  run("time_embed", [&](RngState& r) {
    ParamFactory<double> pf;
    pf.rng = &r;
    TimeEmbed<double> te(pf, "te", 8, 16);
    auto w = D::randn(r, {2, 16});
    return grad_check([&] { return sum_all(mul(te.forward({3, 9}), w)); },
                      {te.w1, te.b1, te.w2, te.b2});
  });
  run("downsample", [&](RngState& r) {
    ParamFactory<double> pf;
    pf.rng = &r;
    Downsample<double> d(pf, "d", 3, false);
    auto x = D::randn(r, {1, 3, 2, 4, 4});
    auto w = D::randn(r, {1, 3, 2, 2, 2});
    return grad_check([&] { return sum_all(mul(d.forward(x), w)); }, {x, d.w, d.b});
  });
  run("upsample", [&](RngState& r) {
    ParamFactory<double> pf;
    pf.rng = &r;
    Upsample<double> u(pf, "u", 3, false);
    auto x = D::randn(r, {1, 3, 2, 2, 2});
    auto w = D::randn(r, {1, 3, 2, 4, 4});
    return grad_check([&] { return sum_all(mul(u.forward(x), w)); }, {x, u.w, u.b});
  });

  return results;
}

}  // namespace sfunet
