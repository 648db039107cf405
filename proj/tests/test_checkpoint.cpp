// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <functional>

#include "melmark/checkpoint.hpp"
#include "melmark/config.hpp"
#include "melmark/rng.hpp"

using namespace melmark;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "melmark_ckpt_tests";
  fs::create_directories(p);
  return p;
}

Errc thrown_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::io;  // sentinel: nothing thrown
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

RunConfig sample_config() {
  RunConfig c;
  c.timesteps = 80;
  c.beta_start = 0.002;
  c.beta_end = 0.17;
  c.trigger.kind = TriggerKind::geometric;
  c.trigger.gamma = 0.73;
  c.trigger.seed = 991;
  c.task_mode = TaskMode::instance;
  c.target_class = 4;
  c.poison_rate = 0.25;
  c.steps = 1234;
  c.batch = 6;
  c.lr = 0.00030000000000000003;  // exercises full-precision serialization
  c.seed = 0xDEADBEEFCAFEF00Dull;
  c.ckpt_every = 500;
  c.method.kind = SamplerKind::ddim;
  c.method.ddim_steps = 20;
  c.method.eta = 0.35;
  c.out_dir = "runs/demo";
  return c;
}

}  // namespace

TEST_CASE("config: serialize/parse round trip is exact", "[config]") {
  RunConfig c = sample_config();
  const std::string text = serialize_config(c);
  RunConfig back = parse_config(text);
  REQUIRE(serialize_config(back) == text);
  REQUIRE(back.lr == c.lr);
  REQUIRE(back.seed == c.seed);
  REQUIRE(back.trigger.kind == TriggerKind::geometric);
  REQUIRE(back.task_mode == TaskMode::instance);
  REQUIRE(back.method.kind == SamplerKind::ddim);
  REQUIRE(back.method.eta == c.method.eta);
  back.validate();
}

TEST_CASE("config: comments, blanks, spacing, and value forms", "[config]") {
  RunConfig c = parse_config(
      "# a comment line\n"
      "\n"
      "  schedule.timesteps = 50  \n"
      "watermark=false\n"
      "trigger.kind=patch_white # trailing comment\n"
      "train.lr=5e-4\n");
  REQUIRE(c.timesteps == 50);
  REQUIRE(c.watermark == false);
  REQUIRE(c.trigger.kind == TriggerKind::patch_white);
  REQUIRE(c.lr == 5e-4);
  REQUIRE(parse_config("watermark=true\n").watermark == true);

  REQUIRE(thrown_code([] { parse_config("no_equals_here\n"); }) == Errc::format);
  REQUIRE(thrown_code([] { parse_config("made.up.key=1\n"); }) == Errc::parameter);
  REQUIRE(thrown_code([] { parse_config("train.batch=three\n"); }) == Errc::format);
  REQUIRE(thrown_code([] { parse_config("train.lr=1.0x\n"); }) == Errc::format);
  REQUIRE(thrown_code([] { parse_config("watermark=maybe\n"); }) == Errc::format);
}

TEST_CASE("config: validation rejects out-of-range settings", "[config]") {
  const auto rejects = [](const std::function<void(RunConfig&)>& tweak) {
    RunConfig c;
    tweak(c);
    return thrown_code([&] { c.validate(); }) == Errc::parameter;
  };
  RunConfig ok;
  ok.validate();  // defaults are sane

  REQUIRE(rejects([](RunConfig& c) { c.trigger.gamma = 1.5; }));
  REQUIRE(rejects([](RunConfig& c) { c.trigger.gamma = -0.1; }));
  REQUIRE(rejects([](RunConfig& c) { c.method.eta = 2.0; }));
  REQUIRE(rejects([](RunConfig& c) { c.poison_rate = -0.25; }));
  REQUIRE(rejects([](RunConfig& c) { c.poison_rate = 1.25; }));
  REQUIRE(rejects([](RunConfig& c) { c.beta_start = 0.5; c.beta_end = 0.1; }));
  REQUIRE(rejects([](RunConfig& c) { c.beta_end = 1.0; }));
  REQUIRE(rejects([](RunConfig& c) { c.timesteps = 0; }));
  REQUIRE(rejects([](RunConfig& c) { c.steps = 0; }));
  REQUIRE(rejects([](RunConfig& c) { c.batch = 0; }));
  REQUIRE(rejects([](RunConfig& c) { c.lr = 0.0; }));
  REQUIRE(rejects([](RunConfig& c) { c.ckpt_every = 0; }));
  REQUIRE(rejects([](RunConfig& c) { c.method.ddim_steps = 101; }));  // > timesteps
}

TEST_CASE("config: command-line style overrides reuse the same keys", "[config]") {
  RunConfig c;
  config_set(c, "trigger.gamma", "0.9");
  config_set(c, "sample.method", "ddim");
  config_set(c, "out_dir", "elsewhere");
  REQUIRE(c.trigger.gamma == 0.9);
  REQUIRE(c.method.kind == SamplerKind::ddim);
  REQUIRE(c.out_dir == "elsewhere");
  REQUIRE(thrown_code([&] { config_set(c, "sample.method", "euler"); }) == Errc::parameter);
}

TEST_CASE("checkpoint: save/load round trip is bit-identical", "[checkpoint]") {
  Rng rng(42);
  Checkpoint c;
  c.step = 12345;
  c.arch_hash = 0xABCDEF0123456789ull;
  c.config = sample_config();

  std::vector<float> params(1000);
  for (float& v : params) v = static_cast<float>(rng.normal());
  c.add("model.params", {1000}, params);
  Grid delta(8, 8);
  for (double& v : delta.v) v = rng.uniform() * 2.0 - 1.0;
  c.add_grid("trigger.delta", delta);
  c.add("schedule.beta", {81}, std::vector<float>(81, 0.01f));

  const fs::path path = temp_dir() / "trip.mmk";
  save_checkpoint(c, path.string());
  Checkpoint back = load_checkpoint(path.string());

  REQUIRE(back.step == c.step);
  REQUIRE(back.arch_hash == c.arch_hash);
  REQUIRE(serialize_config(back.config) == serialize_config(c.config));
  REQUIRE(back.tensors.size() == 3);
  REQUIRE(back.get("model.params").data == params);
  REQUIRE(back.get("trigger.delta").shape == std::vector<uint32_t>{8, 8});
  REQUIRE(checkpoint_to_bytes(back) == checkpoint_to_bytes(c));

  // Saving the reload produces the same file bytes.
  const fs::path path2 = temp_dir() / "trip2.mmk";
  save_checkpoint(back, path2.string());
  REQUIRE(read_file(path) == read_file(path2));

  // Grid values survive through the f32 records.
  Grid d2 = back.get_grid("trigger.delta");
  REQUIRE(d2.same_shape(delta));
  for (size_t i = 0; i < d2.size(); ++i)
    REQUIRE(d2.v[i] == static_cast<double>(static_cast<float>(delta.v[i])));
}

TEST_CASE("checkpoint: corrupted headers are refused with offsets", "[checkpoint]") {
  Checkpoint c;
  c.config = RunConfig{};
  c.add("t", {4}, {1.0f, 2.0f, 3.0f, 4.0f});
  const fs::path path = temp_dir() / "corrupt.mmk";
  save_checkpoint(c, path.string());
  const std::string good = read_file(path);

  // Magic damage names offset 0.
  std::string bad = good;
  bad[0] = 'X';
  write_file(path, bad);
  try {
    load_checkpoint(path.string());
    FAIL("corrupt magic was accepted");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::format);
    REQUIRE(std::string(e.what()).find("offset 0") != std::string::npos);
  }

  // Unsupported version.
  bad = good;
  bad[4] = 9;
  write_file(path, bad);
  REQUIRE(thrown_code([&] { load_checkpoint(path.string()); }) == Errc::unsupported);

  // Truncation inside the tensor data.
  bad = good.substr(0, good.size() - 6);
  write_file(path, bad);
  REQUIRE(thrown_code([&] { load_checkpoint(path.string()); }) == Errc::format);

  // Trailing junk after the last tensor.
  bad = good + "zz";
  write_file(path, bad);
  REQUIRE(thrown_code([&] { load_checkpoint(path.string()); }) == Errc::format);

  REQUIRE(thrown_code([&] { load_checkpoint((temp_dir() / "missing.mmk").string()); }) ==
          Errc::io);
}

TEST_CASE("checkpoint: tensor bookkeeping guards", "[checkpoint]") {
  Checkpoint c;
  c.add("a", {2, 3}, std::vector<float>(6, 1.0f));
  REQUIRE(thrown_code([&] { c.add("a", {1}, {0.0f}); }) == Errc::parameter);
  REQUIRE(thrown_code([&] { c.add("b", {2, 2}, {0.0f}); }) == Errc::size);
  REQUIRE(thrown_code([&] { c.get("nope"); }) == Errc::format);
  REQUIRE(c.find("nope") == nullptr);
  REQUIRE(thrown_code([&] {
            c.add("c", {4}, std::vector<float>(4, 0.0f));
            c.get_grid("c");
          }) == Errc::format);
  REQUIRE(c.get("a").count() == 6);
}
