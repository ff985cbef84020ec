// sfunet command-line tool: train / sample / dwt / idwt / gradcheck / stats /
// inspect / make-toy. Exit codes: 0 success, 1 operational error, 2 usage
// error.

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "sfunet/config.hpp"
#include "sfunet/dataset.hpp"
#include "sfunet/gradcheck_suite.hpp"
#include "sfunet/image.hpp"
#include "sfunet/metrics.hpp"
#include "sfunet/sampler.hpp"
#include "sfunet/trainer.hpp"
#include "sfunet/wavelet.hpp"

namespace fs = std::filesystem;
using namespace sfunet;

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file: " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Tensor<float> dataset_as_batch(const Dataset& ds) {
  Tensor<float> out = Tensor<float>::zeros({ds.count, 3, ds.height, ds.width});
  std::copy(ds.pixels.begin(), ds.pixels.end(), out.data().begin());
  return out;
}

int cmd_train(const std::string& config_path, const std::string& resume_path,
              const std::string& data_dir, const std::string& out_dir) {
  TrainState st = [&] {
    if (!resume_path.empty()) {
      TrainState s = state_from_checkpoint(load_checkpoint(resume_path));
      if (!config_path.empty()) {
        RunConfig rc = parse_run_config(read_text_file(config_path));
        const std::string want = run_config_to_json(rc);
        RunConfig stored = s.cfg;
        stored.trainer = rc.trainer;  // trainer knobs may change on resume
        stored.sampling = rc.sampling;
        if (run_config_to_json(stored) != want)
          fail("--config model/schedule sections do not match the checkpoint being resumed");
        s.cfg.trainer = rc.trainer;
        s.cfg.sampling = rc.sampling;
      }
      std::cout << "resumed from " << resume_path << " at step " << s.step << "\n";
      return s;
    }
    if (config_path.empty()) fail("train: --config is required unless resuming");
    return init_train_state(parse_run_config(read_text_file(config_path)));
  }();

  Dataset ds = load_dataset(data_dir);
  std::cout << "dataset: " << ds.count << " images " << ds.width << "x" << ds.height
            << ", model params: " << st.model.param_count() << "\n";
  const std::string final_path = fit(st, ds, out_dir, &std::cout);
  std::cout << "final checkpoint: " << final_path << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_path, int64_t count, int64_t steps, uint64_t seed,
               bool seed_given, int64_t traj_stride, bool no_ema, const std::string& out_dir) {
  TrainState st = state_from_checkpoint(load_checkpoint(ckpt_path));
  SampleRequest req;
  req.count = count > 0 ? count : st.cfg.sampling.count;
  req.steps = steps >= 0 ? steps : st.cfg.sampling.steps;
  req.seed = seed_given ? seed : st.cfg.sampling.seed;
  req.traj_stride = traj_stride >= 0 ? traj_stride : st.cfg.sampling.traj_stride;
  req.use_ema = !no_ema && st.cfg.sampling.use_ema;
  req.height = req.width = st.cfg.model.image_size;

  SampleResult res = sample_model(st, req);
  fs::create_directories(out_dir);
  const int64_t hw = req.height * req.width;
  for (int64_t i = 0; i < req.count; ++i) {
    std::vector<float> one(res.images.data().begin() + i * 3 * hw,
                           res.images.data().begin() + (i + 1) * 3 * hw);
    char name[64];
    std::snprintf(name, sizeof(name), "sample-%05" PRId64 ".ppm", i);
    write_ppm((fs::path(out_dir) / name).string(),
              tensor_to_image(Tensor<float>::from(std::move(one), {3, req.height, req.width})));
  }
  std::cout << "wrote " << req.count << " samples to " << out_dir << "\n";

  if (!res.trajectory.empty()) {
    std::string manifest;
    for (size_t idx = 0; idx < res.trajectory.size(); ++idx) {
      const auto& snap = res.trajectory[idx];
      char wav_name[64], pix_name[64];
      std::snprintf(wav_name, sizeof(wav_name), "traj-%03zu-t%04" PRId64 "-wavelets.ppm", idx, snap.t);
      std::snprintf(pix_name, sizeof(pix_name), "traj-%03zu-t%04" PRId64 "-pixels.ppm", idx, snap.t);
      bool wrote_mosaic = false;
      if (st.cfg.model.uses_wavelet_5d() || st.cfg.model.variant == Variant::Concat2D) {
        Tensor<float> stack0 = [&] {
          if (st.cfg.model.uses_wavelet_5d()) {
            const auto& s = snap.stack;
            std::vector<float> one(s.data().begin(), s.data().begin() + s.numel() / s.dim(0));
            return Tensor<float>::from(std::move(one), {s.dim(1), 4, s.dim(3), s.dim(4)});
          }
          const auto& s = snap.stack;  // [B,4C,h,w] -> [C,4,h,w]
          std::vector<float> one(s.data().begin(), s.data().begin() + s.numel() / s.dim(0));
          return Tensor<float>::from(std::move(one), {s.dim(1) / 4, 4, s.dim(2), s.dim(3)});
        }();
        write_ppm((fs::path(out_dir) / wav_name).string(),
                  tensor_to_image(export_wavelet_grid(stack0)));
        wrote_mosaic = true;
      }
      {
        const auto& p = snap.pixel_preview;
        std::vector<float> one(p.data().begin(), p.data().begin() + p.numel() / p.dim(0));
        write_ppm((fs::path(out_dir) / pix_name).string(),
                  tensor_to_image(Tensor<float>::from(std::move(one), {3, p.dim(2), p.dim(3)})));
      }
      manifest += std::to_string(idx) + " " + std::to_string(snap.t) + " " +
                  (wrote_mosaic ? wav_name : "-") + " " + pix_name + "\n";
    }
    detail::atomic_write((fs::path(out_dir) / "trajectory.txt").string(), manifest);
    std::cout << "trajectory: " << res.trajectory.size() << " snapshots\n";
  }
  return 0;
}

int cmd_dwt(const std::string& in_path, const std::string& out_path) {
  auto img = image_to_tensor(read_ppm(in_path));
  auto x = reshape(img, {1, 3, img.dim(1), img.dim(2)});
  write_tensor_raw(out_path, dwt(x));
  return 0;
}

int cmd_idwt(const std::string& in_path, const std::string& out_path) {
  auto stack = read_tensor_raw(in_path);
  if (stack.rank() != 5 || stack.dim(0) != 1 || stack.dim(1) != 3 || stack.dim(2) != 4)
    fail(in_path + ": expected a [1,3,4,H/2,W/2] wavelet stack, got " + shape_str(stack.shape()));
  auto x = iwt(stack);
  write_ppm(out_path, tensor_to_image(reshape(x, {3, x.dim(2), x.dim(3)})));
  return 0;
}

int cmd_gradcheck(const std::string& op_filter) {
  auto results = run_gradcheck_suite(op_filter);
  if (results.empty()) {
    std::cerr << "no gradcheck case matches '" << op_filter << "'\n";
    return 1;
  }
  bool all_ok = true;
  for (const auto& r : results) {
    std::printf("%-20s max_rel_err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                r.ok ? "PASS" : "FAIL");
    all_ok = all_ok && r.ok;
  }
  std::printf("%zu cases, %s\n", results.size(), all_ok ? "all passed" : "FAILURES");
  return all_ok ? 0 : 1;
}

int cmd_stats(const std::string& dir) {
  Dataset ds = load_dataset(dir);
  auto st = subband_stats(dwt(dataset_as_batch(ds)));
  static const char* names[4] = {"ll", "lh", "hl", "hh"};
  std::printf("%-8s %12s %12s %12s %12s\n", "subband", "mean", "std", "abs_mean", "energy");
  for (int s = 0; s < 4; ++s)
    std::printf("%-8s %12.6f %12.6f %12.6f %12.6f\n", names[s], st.mean[s], st.stddev[s],
                st.abs_mean[s], st.energy_share[s]);
  return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
  Checkpoint c = load_checkpoint(ckpt_path);
  nlohmann::json j = nlohmann::json::parse(c.config_json);
  std::cout << "config:\n" << j.dump(2) << "\n";
  ScheduleConfig sc;
  if (j.contains("schedule")) sc = detail::schedule_from_json(j.at("schedule"));
  const NoiseSchedule sched = sc.build();
  std::printf("\nschedule: T=%" PRId64 " beta=[%g, %g] sigma_mode=%s alpha_bar_T=%.6g\n",
              sched.T, sched.beta_start, sched.beta_end, to_string(sched.sigma_mode).c_str(),
              sched.get_alpha_bar(sched.T));
  std::cout << "\nparameters:\n";
  int64_t total = 0;
  for (const auto& [name, t] : c.params) {
    std::cout << "  " << name << "  " << shape_str(t.shape()) << "  " << t.numel() << "\n";
    total += t.numel();
  }
  std::cout << "total parameters: " << total << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wavelet-domain denoising diffusion toolkit"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model");
  std::string train_config, train_resume, train_data, train_out;
  train->add_option("--config", train_config, "run config JSON");
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();

  auto* sample = app.add_subcommand("sample", "sample images from a checkpoint");
  std::string sample_ckpt, sample_out;
  int64_t sample_count = -1, sample_steps = -1, sample_traj = -1;
  uint64_t sample_seed = 0;
  bool sample_no_ema = false;
  sample->add_option("--ckpt", sample_ckpt, "checkpoint file")->required();
  sample->add_option("--count", sample_count, "number of images");
  sample->add_option("--steps", sample_steps, "reverse steps (0: full schedule)");
  auto* seed_opt = sample->add_option("--seed", sample_seed, "sampling seed");
  sample->add_option("--traj-stride", sample_traj, "trajectory capture stride (0: off)");
  sample->add_flag("--no-ema", sample_no_ema, "sample with raw weights instead of EMA");
  sample->add_option("--out", sample_out, "output directory")->required();

  auto* dwt_cmd = app.add_subcommand("dwt", "image -> wavelet stack file");
  std::string dwt_in, dwt_out;
  dwt_cmd->add_option("--in", dwt_in, "input PPM image")->required();
  dwt_cmd->add_option("--out", dwt_out, "output raw tensor (.wdt)")->required();

  auto* idwt_cmd = app.add_subcommand("idwt", "wavelet stack file -> image");
  std::string idwt_in, idwt_out;
  idwt_cmd->add_option("--in", idwt_in, "input raw tensor (.wdt)")->required();
  idwt_cmd->add_option("--out", idwt_out, "output PPM image")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string gc_op;
  gc->add_option("--op", gc_op, "only run cases whose name contains this substring");

  auto* stats = app.add_subcommand("stats", "per-subband statistics of a directory of images");
  std::string stats_data, stats_samples;
  stats->add_option("--data", stats_data, "dataset directory");
  stats->add_option("--samples", stats_samples, "sample directory");

  auto* inspect = app.add_subcommand("inspect", "print checkpoint config and parameter table");
  std::string inspect_ckpt;
  inspect->add_option("--ckpt", inspect_ckpt, "checkpoint file")->required();

  auto* toy = app.add_subcommand("make-toy", "generate a procedural toy dataset");
  std::string toy_kind = "blobs", toy_out;
  int64_t toy_n = 64, toy_size = 16;
  uint64_t toy_seed = 0;
  toy->add_option("--kind", toy_kind, "blobs | stripes | checkers");
  toy->add_option("--n", toy_n, "number of images");
  toy->add_option("--size", toy_size, "image side length (even, >= 8)");
  toy->add_option("--seed", toy_seed, "generator seed");
  toy->add_option("--out", toy_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(train_config, train_resume, train_data, train_out);
    if (*sample)
      return cmd_sample(sample_ckpt, sample_count, sample_steps, sample_seed,
                        seed_opt->count() > 0, sample_traj, sample_no_ema, sample_out);
    if (*dwt_cmd) return cmd_dwt(dwt_in, dwt_out);
    if (*idwt_cmd) return cmd_idwt(idwt_in, idwt_out);
    if (*gc) return cmd_gradcheck(gc_op);
    if (*stats) {
      if (stats_data.empty() == stats_samples.empty())
        fail("stats: pass exactly one of --data or --samples");
      return cmd_stats(stats_data.empty() ? stats_samples : stats_data);
    }
    if (*inspect) return cmd_inspect(inspect_ckpt);
    if (*toy) {
      write_dataset(toy_out, make_toy_dataset(toy_kind_from(toy_kind), toy_n, toy_size, toy_seed));
      std::cout << "wrote " << toy_n << " " << toy_kind << " images to " << toy_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
