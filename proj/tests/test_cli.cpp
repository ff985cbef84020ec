#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "sfunet/model.hpp"

#ifndef SFUNET_CLI_PATH
#error "SFUNET_CLI_PATH must be defined by the build"
#endif

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SFUNET_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string work_dir() {
  static std::string dir = [] {
    auto p = fs::temp_directory_path() / "sfunet_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit 2, operational errors exit 1, success exits 0") {
  CHECK(run("definitely-not-a-subcommand") == 2);
  CHECK(run("") == 2);
  CHECK(run("train --data x") == 2);                        // missing required --out
  CHECK(run("sample --ckpt nope.wdck --out " + work_dir()) == 1);  // missing file
  CHECK(run("make-toy --kind blobs --n 4 --size 16 --seed 1 --out " + work_dir() + "/d") == 0);
  CHECK(run("make-toy --kind nosuch --n 4 --size 16 --seed 1 --out " + work_dir() + "/d2") == 1);
  CHECK(run("stats --data " + work_dir() + "/d --samples " + work_dir() + "/d") == 1);
  CHECK(run("stats --data " + work_dir() + "/d") == 0);
}

TEST_CASE("train, inspect, sample, and the dwt/idwt round trip") {
  const std::string dir = work_dir();
  const std::string cfg = dir + "/cfg.json";
  {
    std::ofstream out(cfg);
    out << R"({
      "model": {"variant": "sfunet", "base_channels": 8, "channel_mult": [1,2],
                "blocks_per_stage": 1, "attention_resolutions": [4], "num_heads": 2,
                "dropout": 0.1, "image_size": 16},
      "trainer": {"batch_size": 4, "iterations": 2, "seed": 9, "log_interval": 1},
      "schedule": {"timesteps": 10},
      "sampling": {"count": 1, "steps": 5, "seed": 3}
    })";
  }
  CHECK(run("make-toy --kind blobs --n 8 --size 16 --seed 2 --out " + dir + "/data") == 0);
  CHECK(run("train --config " + cfg + " --data " + dir + "/data --out " + dir + "/run") == 0);
  CHECK(fs::exists(dir + "/run/last.wdck"));
  CHECK(run("inspect --ckpt " + dir + "/run/last.wdck") == 0);
  CHECK(run("sample --ckpt " + dir + "/run/last.wdck --count 1 --steps 5 --out " + dir + "/samp") == 0);
  CHECK(fs::exists(dir + "/samp/sample-00000.ppm"));

  // train with iterations=0 writes an initial checkpoint that sample can load
  const std::string cfg0 = dir + "/cfg0.json";
  {
    std::ifstream in(cfg);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto pos = text.find("\"iterations\": 2");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 15, "\"iterations\": 0");
    std::ofstream out(cfg0);
    out << text;
  }
  CHECK(run("train --config " + cfg0 + " --data " + dir + "/data --out " + dir + "/run0") == 0);
  CHECK(run("sample --ckpt " + dir + "/run0/last.wdck --count 1 --steps 3 --out " + dir + "/samp0") == 0);

  // dwt then idwt reproduces the image within the 8-bit quantization bound
  CHECK(run("dwt --in " + dir + "/data/img-00000.ppm --out " + dir + "/x.wdt") == 0);
  CHECK(run("idwt --in " + dir + "/x.wdt --out " + dir + "/back.ppm") == 0);
  std::ifstream a(dir + "/data/img-00000.ppm", std::ios::binary);
  std::ifstream b(dir + "/back.ppm", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  REQUIRE(sa.size() == sb.size());
  int max_delta = 0;
  for (size_t i = 15; i < sa.size(); ++i)  // skip the identical header
    max_delta = std::max(max_delta,
                         std::abs(int(uint8_t(sa[i])) - int(uint8_t(sb[i]))));
  CHECK(max_delta <= 1);
}

TEST_CASE("inspect reports the same total as param_count") {
  const std::string dir = work_dir();
  REQUIRE(fs::exists(dir + "/run/last.wdck"));  // produced by the previous test case
  const std::string cmd =
      std::string(SFUNET_CLI_PATH) + " inspect --ckpt " + dir + "/run/last.wdck 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) out += buf;
  pclose(pipe);

  const auto pos = out.find("total parameters: ");
  REQUIRE(pos != std::string::npos);
  const int64_t printed = std::stoll(out.substr(pos + 18));

  sfunet::ModelConfig mc;  // must mirror the config written in the train test
  mc.variant = sfunet::Variant::Sfunet;
  mc.base_channels = 8;
  mc.channel_mult = {1, 2};
  mc.blocks_per_stage = 1;
  mc.attention_resolutions = {4};
  mc.num_heads = 2;
  mc.image_size = 16;
  CHECK(printed == sfunet::planned_param_count<float>(mc));
}

TEST_CASE("gradcheck subcommand exit codes") {
  CHECK(run("gradcheck --op softmax") == 0);
  CHECK(run("gradcheck --op no_such_op_name") == 1);
}
