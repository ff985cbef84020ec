#pragma once

// Training loop: sample per-example timesteps, corrupt the wavelet stack,
// regress the injected noise under MSE, Adam updates, EMA shadow weights,
// periodic checkpoints. Resume is bit-exact for a fixed thread count: the
// RNG stream, Adam moments, EMA, and the (epoch, cursor) batch iterator
// state all live in the checkpoint.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sfunet/checkpoint.hpp"
#include "sfunet/config.hpp"
#include "sfunet/dataset.hpp"
#include "sfunet/diffusion.hpp"
#include "sfunet/model.hpp"
#include "sfunet/wavelet.hpp"

namespace sfunet {

struct AdamParams {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <typename VecP, typename VecG, typename VecM>
void adam_update(VecP& param, const VecG& grad, VecM& m, VecM& v, int64_t step,
                 double lr, AdamParams ap = {}) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size())
    fail("adam_update: buffer size mismatch");
  if (step < 1) fail("adam_update: step must be >= 1");
  const double bc1 = 1.0 - std::pow(ap.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(ap.beta2, static_cast<double>(step));
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = ap.beta1 * m[i] + (1.0 - ap.beta1) * g;
    const double vi = ap.beta2 * v[i] + (1.0 - ap.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    param[i] -= static_cast<float>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + ap.eps));
  }
}

// pixel batch -> the space the variant denoises in, and back
inline Tensor<float> to_model_space(const ModelConfig& mc, const Tensor<float>& pixels) {
  switch (mc.variant) {
    case Variant::Pixel2D: return pixels;
    case Variant::Concat2D: return dwt_concat(pixels);
    default: return dwt(pixels);
  }
}

inline Tensor<float> to_pixel_space(const ModelConfig& mc, const Tensor<float>& u) {
  switch (mc.variant) {
    case Variant::Pixel2D: return u;
    case Variant::Concat2D: return iwt_concat(u);
    default: return iwt(u);
  }
}

struct TrainState {
  RunConfig cfg;
  Model<float> model;
  NoiseSchedule schedule;
  std::vector<std::vector<float>> adam_m, adam_v;
  std::vector<Tensor<float>> ema;  // aligned with model.pf.params
  int64_t step = 0;
  int64_t epoch = 0, cursor = 0;  // dataset iterator position
  double ema_loss = -1.0;
  RngState rng;
};

inline TrainState init_train_state(const RunConfig& rc) {
  TrainState st;
  st.cfg = rc;
  st.rng = RngState(rc.trainer.seed);
  st.model = build_model<float>(rc.model, &st.rng);
  st.schedule = rc.schedule.build();
  for (auto& [name, t] : st.model.pf.params) {
    st.adam_m.emplace_back(t.data().size(), 0.0f);
    st.adam_v.emplace_back(t.data().size(), 0.0f);
    st.ema.push_back(t.detach());
  }
  return st;
}

inline void ema_update(TrainState& st) {
  const double rate = st.cfg.trainer.ema_rate;
  for (size_t i = 0; i < st.ema.size(); ++i) {
    auto& shadow = st.ema[i].data();
    const auto& p = st.model.pf.params[i].second.data();
    for (size_t k = 0; k < shadow.size(); ++k)
      shadow[k] = static_cast<float>(rate * shadow[k] + (1.0 - rate) * p[k]);
  }
}

inline double grad_global_norm(const TrainState& st) {
  double s = 0;
  for (const auto& [name, t] : st.model.pf.params)
    for (float g : t.grad()) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

inline double train_step(TrainState& st, const Tensor<float>& batch) {
  const auto& tc = st.cfg.trainer;
  if (batch.rank() != 4 || batch.dim(1) != st.cfg.model.in_channels)
    fail("train_step: expected pixel batch [B," + std::to_string(st.cfg.model.in_channels) +
         ",H,W], got " + shape_str(batch.shape()));
  const int64_t B = batch.dim(0);

  Tensor<float> u0, ut, eps;
  std::vector<int64_t> ts(static_cast<size_t>(B));
  {
    NoGradGuard ng;
    u0 = to_model_space(st.cfg.model, batch);
    for (auto& t : ts) t = 1 + st.rng.uniform_int(st.schedule.T);
    eps = Tensor<float>::randn(st.rng, u0.shape());
    ut = q_sample_batch(st.schedule, u0, ts, eps);
  }

  Tensor<float> eps_hat = st.model.forward(ut, ts, /*train=*/true, &st.rng);
  Tensor<float> diff = sub(eps, eps_hat);
  Tensor<float> loss = mean_all(mul(diff, diff));
  const double loss_val = static_cast<double>(loss.item());
  if (!std::isfinite(loss_val)) {
    std::ostringstream os;
    os << "train_step: non-finite loss " << loss_val << " at step " << st.step + 1 << ", t = [";
    for (size_t i = 0; i < ts.size(); ++i) os << (i ? "," : "") << ts[i];
    os << "]";
    fail(os.str());
  }

  for (auto& [name, t] : st.model.pf.params) t.zero_grad();
  loss.backward();

  double clip_scale = 1.0;
  if (tc.grad_clip > 0.0) {
    const double norm = grad_global_norm(st);
    if (norm > tc.grad_clip) clip_scale = tc.grad_clip / norm;
  }

  ++st.step;
  for (size_t i = 0; i < st.model.pf.params.size(); ++i) {
    auto& t = st.model.pf.params[i].second;
    t.impl()->ensure_grad();
    if (clip_scale != 1.0)
      for (auto& g : t.grad()) g = static_cast<float>(g * clip_scale);
    adam_update(t.data(), t.grad(), st.adam_m[i], st.adam_v[i], st.step, tc.lr);
  }
  ema_update(st);

  st.ema_loss = st.ema_loss < 0 ? loss_val : 0.99 * st.ema_loss + 0.01 * loss_val;
  return loss_val;
}

// ---------------------------------------------------------------------------
// checkpoint round trip

inline Checkpoint make_checkpoint(const TrainState& st) {
  Checkpoint c;
  nlohmann::json j = nlohmann::json::parse(run_config_to_json(st.cfg));
  j["state"] = {{"step", st.step},
                {"epoch", st.epoch},
                {"cursor", st.cursor},
                {"ema_loss", st.ema_loss}};
  c.config_json = j.dump(2);
  for (size_t i = 0; i < st.model.pf.params.size(); ++i) {
    const auto& [name, t] = st.model.pf.params[i];
    c.params.emplace_back(name, t);
    c.ema.emplace_back(name, st.ema[i]);
    c.adam_m.emplace_back(name, Tensor<float>::from(st.adam_m[i], t.shape()));
    c.adam_v.emplace_back(name, Tensor<float>::from(st.adam_v[i], t.shape()));
  }
  c.rng_state = st.rng.serialize();
  return c;
}

inline TrainState state_from_checkpoint(const Checkpoint& c) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(c.config_json);
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("checkpoint: bad config JSON: ") + e.what());
  }
  nlohmann::json state;
  if (j.contains("state")) {
    state = j.at("state");
    j.erase("state");
  }
  TrainState st = init_train_state(parse_run_config(j.dump()));
  if (!state.is_null()) {
    st.step = state.value("step", int64_t{0});
    st.epoch = state.value("epoch", int64_t{0});
    st.cursor = state.value("cursor", int64_t{0});
    st.ema_loss = state.value("ema_loss", -1.0);
  }

  auto restore = [](const NamedTensors& src,
                    const std::vector<std::pair<std::string, Tensor<float>>>& dst_names,
                    auto&& write) {
    if (src.size() != dst_names.size())
      fail("checkpoint: tensor count mismatch (" + std::to_string(src.size()) + " vs " +
           std::to_string(dst_names.size()) + ")");
    for (size_t i = 0; i < src.size(); ++i) {
      const auto& [name, t] = src[i];
      if (name != dst_names[i].first)
        fail("checkpoint: tensor name mismatch: '" + name + "' vs '" + dst_names[i].first + "'");
      if (t.shape() != dst_names[i].second.shape())
        fail("checkpoint: shape mismatch for " + name + ": " + shape_str(t.shape()) + " vs " +
             shape_str(dst_names[i].second.shape()));
      write(i, t);
    }
  };
  restore(c.params, st.model.pf.params,
          [&](size_t i, const Tensor<float>& t) { st.model.pf.params[i].second.data() = t.data(); });
  restore(c.ema, st.model.pf.params,
          [&](size_t i, const Tensor<float>& t) { st.ema[i].data() = t.data(); });
  restore(c.adam_m, st.model.pf.params,
          [&](size_t i, const Tensor<float>& t) { st.adam_m[i].assign(t.data().begin(), t.data().end()); });
  restore(c.adam_v, st.model.pf.params,
          [&](size_t i, const Tensor<float>& t) { st.adam_v[i].assign(t.data().begin(), t.data().end()); });
  st.rng = RngState::deserialize(c.rng_state);
  return st;
}

// ---------------------------------------------------------------------------
// fit: the full loop with logging and periodic checkpoints
// log format: "step loss ema_loss elapsed_ms", one record per log interval

inline std::string fit(TrainState& st, const Dataset& ds, const std::string& out_dir,
                       std::ostream* echo = nullptr) {
  namespace fs = std::filesystem;
  const auto& tc = st.cfg.trainer;
  if (ds.count == 0) fail("fit: dataset is empty");
  fs::create_directories(out_dir);
  std::ofstream log((fs::path(out_dir) / "train.log").string(), std::ios::app);
  if (!log) fail("fit: cannot open train.log in " + out_dir);

  BatchIterator it(ds, tc.seed, st.epoch, st.cursor);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - t0).count();
  };
  auto emit = [&](double loss) {
    std::ostringstream line;
    line << st.step << " " << loss << " " << st.ema_loss << " " << elapsed_ms();
    log << line.str() << "\n";
    log.flush();
    if (echo) (*echo) << line.str() << "\n";
  };
  auto write_ckpt = [&](const std::string& name) {
    st.epoch = it.epoch;
    st.cursor = it.cursor;
    const std::string path = (fs::path(out_dir) / name).string();
    save_checkpoint(path, make_checkpoint(st));
    return path;
  };

  while (st.step < tc.iterations) {
    Tensor<float> batch = it.next(tc.batch_size);
    const double loss = train_step(st, batch);
    if (st.step % tc.log_interval == 0 || st.step == tc.iterations) emit(loss);
    if (tc.checkpoint_interval > 0 && st.step % tc.checkpoint_interval == 0 &&
        st.step < tc.iterations)
      write_ckpt("ckpt-" + std::to_string(st.step) + ".wdck");
  }
  return write_ckpt("last.wdck");
}

}  // namespace sfunet
