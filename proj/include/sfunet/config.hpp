#pragma once

// JSON run configuration: top-level sections model / trainer / schedule /
// sampling. Parsing is strict - unknown keys anywhere are an error.

#include <json.hpp>

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "sfunet/diffusion.hpp"
#include "sfunet/model.hpp"

namespace sfunet {

struct TrainerConfig {
  double lr = 1e-4;
  int64_t batch_size = 128;
  int64_t iterations = 0;
  double ema_rate = 0.9999;
  int64_t checkpoint_interval = 0;  // 0: only the final checkpoint
  int64_t log_interval = 10;
  uint64_t seed = 0;
  double grad_clip = 0.0;  // 0: off

  void validate() const {
    if (lr <= 0.0) fail("trainer.lr must be positive");
    if (batch_size < 1) fail("trainer.batch_size must be positive");
    if (iterations < 0) fail("trainer.iterations must be >= 0");
    if (!(ema_rate > 0.0 && ema_rate < 1.0)) fail("trainer.ema_rate must be in (0,1)");
    if (checkpoint_interval < 0) fail("trainer.checkpoint_interval must be >= 0");
    if (log_interval < 1) fail("trainer.log_interval must be positive");
    if (grad_clip < 0.0) fail("trainer.grad_clip must be >= 0");
  }
};

struct ScheduleConfig {
  int64_t timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  SigmaMode sigma_mode = SigmaMode::Beta;

  NoiseSchedule build() const {
    return linear_schedule(timesteps, beta_start, beta_end, sigma_mode);
  }
};

struct SamplingConfig {
  int64_t count = 16;
  int64_t steps = 0;  // 0: use the full schedule
  uint64_t seed = 0;
  int64_t traj_stride = 0;  // 0: no trajectory capture
  bool use_ema = true;
};

struct RunConfig {
  ModelConfig model;
  TrainerConfig trainer;
  ScheduleConfig schedule;
  SamplingConfig sampling;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::set<std::string>& known,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      fail("config: unknown key '" + it.key() + "' in " + where);
}

inline ModelConfig model_from_json(const json& j) {
  check_keys(j,
             {"variant", "base_channels", "channel_mult", "blocks_per_stage",
              "attention_resolutions", "num_heads", "dropout", "in_channels", "image_size"},
             "model");
  ModelConfig c;
  if (j.contains("variant")) c.variant = variant_from(j.at("variant").get<std::string>());
  if (j.contains("base_channels")) c.base_channels = j.at("base_channels").get<int64_t>();
  if (j.contains("channel_mult")) c.channel_mult = j.at("channel_mult").get<std::vector<int64_t>>();
  if (j.contains("blocks_per_stage")) c.blocks_per_stage = j.at("blocks_per_stage").get<int64_t>();
  if (j.contains("attention_resolutions")) {
    c.attention_resolutions.clear();
    for (const auto& r : j.at("attention_resolutions")) c.attention_resolutions.insert(r.get<int64_t>());
  }
  if (j.contains("num_heads")) c.num_heads = j.at("num_heads").get<int64_t>();
  if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
  if (j.contains("in_channels")) c.in_channels = j.at("in_channels").get<int64_t>();
  if (j.contains("image_size")) c.image_size = j.at("image_size").get<int64_t>();
  return c;
}

inline json model_to_json(const ModelConfig& c) {
  json j;
  j["variant"] = to_string(c.variant);
  j["base_channels"] = c.base_channels;
  j["channel_mult"] = c.channel_mult;
  j["blocks_per_stage"] = c.blocks_per_stage;
  j["attention_resolutions"] = std::vector<int64_t>(c.attention_resolutions.begin(),
                                                    c.attention_resolutions.end());
  j["num_heads"] = c.num_heads;
  j["dropout"] = c.dropout;
  j["in_channels"] = c.in_channels;
  j["image_size"] = c.image_size;
  return j;
}

inline TrainerConfig trainer_from_json(const json& j) {
  check_keys(j,
             {"lr", "batch_size", "iterations", "ema_rate", "checkpoint_interval",
              "log_interval", "seed", "grad_clip"},
             "trainer");
  TrainerConfig c;
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int64_t>();
  if (j.contains("iterations")) c.iterations = j.at("iterations").get<int64_t>();
  if (j.contains("ema_rate")) c.ema_rate = j.at("ema_rate").get<double>();
  if (j.contains("checkpoint_interval")) c.checkpoint_interval = j.at("checkpoint_interval").get<int64_t>();
  if (j.contains("log_interval")) c.log_interval = j.at("log_interval").get<int64_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  if (j.contains("grad_clip")) c.grad_clip = j.at("grad_clip").get<double>();
  return c;
}

inline json trainer_to_json(const TrainerConfig& c) {
  json j;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["iterations"] = c.iterations;
  j["ema_rate"] = c.ema_rate;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["log_interval"] = c.log_interval;
  j["seed"] = c.seed;
  j["grad_clip"] = c.grad_clip;
  return j;
}

inline ScheduleConfig schedule_from_json(const json& j) {
  check_keys(j, {"timesteps", "beta_start", "beta_end", "sigma_mode"}, "schedule");
  ScheduleConfig c;
  if (j.contains("timesteps")) c.timesteps = j.at("timesteps").get<int64_t>();
  if (j.contains("beta_start")) c.beta_start = j.at("beta_start").get<double>();
  if (j.contains("beta_end")) c.beta_end = j.at("beta_end").get<double>();
  if (j.contains("sigma_mode")) c.sigma_mode = sigma_mode_from(j.at("sigma_mode").get<std::string>());
  return c;
}

inline json schedule_to_json(const ScheduleConfig& c) {
  json j;
  j["timesteps"] = c.timesteps;
  j["beta_start"] = c.beta_start;
  j["beta_end"] = c.beta_end;
  j["sigma_mode"] = to_string(c.sigma_mode);
  return j;
}

inline SamplingConfig sampling_from_json(const json& j) {
  check_keys(j, {"count", "steps", "seed", "traj_stride", "use_ema"}, "sampling");
  SamplingConfig c;
  if (j.contains("count")) c.count = j.at("count").get<int64_t>();
  if (j.contains("steps")) c.steps = j.at("steps").get<int64_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  if (j.contains("traj_stride")) c.traj_stride = j.at("traj_stride").get<int64_t>();
  if (j.contains("use_ema")) c.use_ema = j.at("use_ema").get<bool>();
  return c;
}

inline json sampling_to_json(const SamplingConfig& c) {
  json j;
  j["count"] = c.count;
  j["steps"] = c.steps;
  j["seed"] = c.seed;
  j["traj_stride"] = c.traj_stride;
  j["use_ema"] = c.use_ema;
  return j;
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("config: JSON parse error: ") + e.what());
  }
  detail::check_keys(j, {"model", "trainer", "schedule", "sampling"}, "top level");
  RunConfig rc;
  try {
    if (j.contains("model")) rc.model = detail::model_from_json(j.at("model"));
    if (j.contains("trainer")) rc.trainer = detail::trainer_from_json(j.at("trainer"));
    if (j.contains("schedule")) rc.schedule = detail::schedule_from_json(j.at("schedule"));
    if (j.contains("sampling")) rc.sampling = detail::sampling_from_json(j.at("sampling"));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("config: ") + e.what());
  }
  rc.model.validate();
  rc.trainer.validate();
  return rc;
}

inline std::string run_config_to_json(const RunConfig& rc, int indent = 2) {
  nlohmann::json j;
  j["model"] = detail::model_to_json(rc.model);
  j["trainer"] = detail::trainer_to_json(rc.trainer);
  j["schedule"] = detail::schedule_to_json(rc.schedule);
  j["sampling"] = detail::sampling_to_json(rc.sampling);
  return j.dump(indent);
}

}  // namespace sfunet
