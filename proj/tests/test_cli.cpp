// Copyright 2026 The asrq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Drives the installed binary through std::system. The binary path arrives
// in the ASRQ_CLI environment variable (set by ctest).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "asrq/int_runtime.hpp"
#include "asrq/io.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* p = std::getenv("ASRQ_CLI");
  REQUIRE_MESSAGE(p != nullptr, "ASRQ_CLI must point at the asrq binary");
  return p;
}

int run(const std::string& args) {
  const std::string cmd = cli() + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::path("cli_scratch") / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

std::string file_bytes(const std::string& path) { return asrq::read_text_file(path); }

void make_pipeline(const Scratch& s, uint64_t seed) {
  REQUIRE(run("build-toy --out " + (s / "toy.aqm") +
              " --blocks 2 --channels 6 --mel 6 --frames 24 --vocab 5 --seed " +
              std::to_string(seed)) == 0);
  REQUIRE(run("stats --model " + (s / "toy.aqm") + " --out " + (s / "toy_s.aqm") +
              " --batches 6 --batch-size 4 --momentum 0.2 --seed " +
              std::to_string(seed + 1)) == 0);
  REQUIRE(run("gensynth --model " + (s / "toy_s.aqm") + " --out-dir " + (s / "synth") +
              " --batches 3 --batch-size 4 --iters 30 --lr 0.05 --seed " +
              std::to_string(seed + 2) + " --threads 1") == 0);
  std::string data_flags;
  for (int i = 0; i < 3; ++i)
    data_flags += " --data " + (s / ("synth/synth_00" + std::to_string(i) + ".amel"));
  REQUIRE(run("calibrate --model " + (s / "toy_s.aqm") + data_flags + " --out " +
              (s / "qc.json") + " --observer minmax") == 0);
  REQUIRE(run("quantize --model " + (s / "toy_s.aqm") + " --quant-config " +
              (s / "qc.json") + " --out " + (s / "toy_int.aqm")) == 0);
  REQUIRE(run("infer --model " + (s / "toy_int.aqm") + " --input " +
              (s / "synth/synth_000.amel") + " --engine integer --out " +
              (s / "li.amel")) == 0);
}

}  // namespace

TEST_CASE("unknown subcommands and missing flags exit with usage code 1") {
  CHECK(run("definitely-not-a-subcommand") == 1);
  CHECK(run("") == 1);
  CHECK(run("stats") == 1);  // --model is required
}

TEST_CASE("missing files exit with the data error code 2") {
  Scratch s("missing");
  CHECK(run("stats --model " + (s / "nonexistent.aqm")) == 2);
  CHECK(run("infer --model " + (s / "nope.aqm") + " --input " + (s / "nope.amel")) == 2);
}

TEST_CASE("numeric failures exit with code 3") {
  Scratch s("numeric");
  REQUIRE(run("build-toy --out " + (s / "toy.aqm") +
              " --blocks 1 --channels 4 --mel 4 --frames 16 --vocab 0 --seed 1") == 0);
  // constant-zero data with momentum 1 drives the running variance to zero,
  // which makes every generation batch diverge
  REQUIRE(run("stats --model " + (s / "toy.aqm") + " --out " + (s / "toy_z.aqm") +
              " --kind uniform --lo 0 --hi 0 --momentum 1.0 --batches 2 --seed 2") == 0);
  CHECK(run("gensynth --model " + (s / "toy_z.aqm") + " --out-dir " + (s / "g") +
            " --batches 2 --iters 5 --seed 3") == 3);
}

TEST_CASE("full pipeline produces every artifact") {
  Scratch s("pipeline");
  make_pipeline(s, 10);
  for (const char* f : {"toy.aqm", "toy_s.aqm", "qc.json", "toy_int.aqm", "li.amel"})
    CHECK_MESSAGE(fs::exists(s / f), "missing ", f);
  for (int i = 0; i < 3; ++i) {
    const std::string base = s / ("synth/synth_00" + std::to_string(i) + ".amel");
    CHECK(fs::exists(base));
    CHECK(fs::exists(base + ".json"));
  }
}

TEST_CASE("integer and simulated engines agree within one output step") {
  Scratch s("engines");
  make_pipeline(s, 20);
  REQUIRE(run("infer --model " + (s / "toy_int.aqm") + " --input " +
              (s / "synth/synth_000.amel") + " --engine simulated --out " +
              (s / "ls.amel")) == 0);
  asrq::Tensor li = asrq::read_amel(s / "li.amel");
  asrq::Tensor ls = asrq::read_amel(s / "ls.amel");
  const double out_scale = asrq::load_quantized(s / "toy_int.aqm").output_scale;
  REQUIRE(li.shape() == ls.shape());
  double worst = 0;
  for (int64_t i = 0; i < li.numel(); ++i)
    worst = std::max(worst, std::abs(double(li.f32()[i]) - double(ls.f32()[i])));
  CHECK(worst <= out_scale + 1e-9);
}

TEST_CASE("reruns with identical seeds are byte-identical and inputs stay untouched") {
  Scratch a("det_a"), b("det_b");
  make_pipeline(a, 30);
  const std::string toy_before = file_bytes(a / "toy.aqm");
  const std::string synth_before = file_bytes(a / "synth/synth_000.amel");
  make_pipeline(b, 30);
  for (const char* f :
       {"toy.aqm", "toy_s.aqm", "qc.json", "toy_int.aqm", "li.amel",
        "synth/synth_000.amel", "synth/synth_001.amel", "synth/synth_002.amel"})
    CHECK_MESSAGE(file_bytes(a / f) == file_bytes(b / f), "artifact differs: ", f);
  // the first run's inputs were not mutated by downstream stages
  CHECK(file_bytes(a / "toy.aqm") == toy_before);
  CHECK(file_bytes(a / "synth/synth_000.amel") == synth_before);
}

TEST_CASE("config file supplies defaults and flags override it") {
  Scratch s("config");
  REQUIRE(run("build-toy --out " + (s / "toy.aqm") + " --blocks 1 --channels 4 --mel 4" +
              " --frames 16 --vocab 0 --seed 1") == 0);
  REQUIRE(run("stats --model " + (s / "toy.aqm") + " --out " + (s / "toy_s.aqm") +
              " --batches 4 --seed 2") == 0);
  std::ofstream cfg(s / "gen.json");
  cfg << "{\"batches\": 2, \"iters\": 10, \"batch-size\": 4}";
  cfg.close();
  REQUIRE(run("gensynth --config " + (s / "gen.json") + " --model " + (s / "toy_s.aqm") +
              " --out-dir " + (s / "g1") + " --seed 3") == 0);
  int count = 0;
  for (const auto& e : fs::directory_iterator(s / "g1"))
    count += e.path().extension() == ".amel";
  CHECK(count == 2);  // from the config file
  REQUIRE(run("gensynth --config " + (s / "gen.json") + " --model " + (s / "toy_s.aqm") +
              " --out-dir " + (s / "g2") + " --seed 3 --batches 1") == 0);
  count = 0;
  for (const auto& e : fs::directory_iterator(s / "g2"))
    count += e.path().extension() == ".amel";
  CHECK(count == 1);  // flag wins over the config file
}

TEST_CASE("ASRQ_THREADS caps parallelism without changing the bytes") {
  Scratch s("threads");
  REQUIRE(run("build-toy --out " + (s / "toy.aqm") +
              " --blocks 1 --channels 4 --mel 4 --frames 16 --vocab 0 --seed 6") == 0);
  REQUIRE(run("stats --model " + (s / "toy.aqm") + " --out " + (s / "toy_s.aqm") +
              " --batches 4 --seed 7") == 0);
  auto gen = [&](const std::string& dir, const std::string& env) {
    const std::string cmd = env + " " + cli() + " gensynth --model " + (s / "toy_s.aqm") +
                            " --out-dir " + (s / dir) +
                            " --batches 2 --iters 15 --seed 8 --threads 0 >/dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  };
  gen("serial", "ASRQ_THREADS=1");
  gen("capped", "ASRQ_THREADS=2");
  for (int i = 0; i < 2; ++i) {
    const std::string f = "synth_00" + std::to_string(i) + ".amel";
    CHECK(file_bytes(s / ("serial/" + f)) == file_bytes(s / ("capped/" + f)));
  }
}

TEST_CASE("ablate emits the four-way comparison table") {
  Scratch s("ablate");
  REQUIRE(run("build-toy --out " + (s / "toy.aqm") +
              " --blocks 1 --channels 4 --mel 4 --frames 16 --vocab 4 --seed 4") == 0);
  REQUIRE(run("stats --model " + (s / "toy.aqm") + " --out " + (s / "toy_s.aqm") +
              " --batches 6 --seed 5") == 0);
  REQUIRE(run("ablate --model " + (s / "toy_s.aqm") + " --out-dir " + (s / "abl") +
              " --seeds 1 --samples 4 --iters 15 --batches 2 --batch-size 4") == 0);
  CHECK(fs::exists(s / "abl/ablate.json"));
  const std::string csv = file_bytes(s / "abl/ablate.csv");
  CHECK(csv.find("synthetic_w8a8") != std::string::npos);
  CHECK(csv.find("random_w8a8") != std::string::npos);
  CHECK(csv.find("synthetic_w6a8") != std::string::npos);
  CHECK(csv.find("random_w6a8") != std::string::npos);
}
