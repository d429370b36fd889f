// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/config.hpp"

#include <doctest.h>

using namespace raindiff;

namespace {

std::string rejection(const std::string& json) {
  try {
    parse_config(json);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("an empty config is the desk profile") {
  for (const char* text : {"", "  \n", "{}"}) {
    const RunConfig c = parse_config(text);
    CHECK(c.schedule_T == 200);
    CHECK(c.sample_S == 10);
    CHECK(c.widths == std::array<int, 3>{32, 64, 128});
    CHECK(c.train.batch_size == 4);
    CHECK(c.train.resolution == 32);
    CHECK(c.train.lambda_cyc == 1.0);
    CHECK(c.train.adam.lr == 2e-5);
    CHECK(c.train.adam.beta1 == 0.5);
    CHECK(c.train.adam.beta2 == 0.999);
    CHECK(c.train.max_steps == 5000);
    CHECK(c.patch_p == 128);
    CHECK(c.corpus.n_clean == 200);
    CHECK(c.corpus.n_eval == 20);
    CHECK(c.schedule().betas() == NoiseSchedule::linear(200, 0.1 / 200, 20.0 / 200).betas());
  }
}

TEST_CASE("keys override their fields") {
  const RunConfig c = parse_config(R"({"schedule.T": 1000, "schedule.beta_start": 1e-4, "schedule.beta_end": 0.02,
    "sample.S": 50, "model.widths": [8, 16, 24], "optim.lr": 1e-4, "seeds.noise": 9,
    "paths.corpus": "/tmp/c", "train.stop_grad_conditions": true, "rain.streaks_min": 1, "rain.streaks_max": 3})");
  CHECK(c.schedule().betas() == NoiseSchedule::linear(1000, 1e-4, 0.02).betas());
  CHECK(c.sample_S == 50);
  CHECK(c.widths == std::array<int, 3>{8, 16, 24});
  CHECK(c.train.adam.lr == 1e-4);
  CHECK(c.seed_noise == 9);
  CHECK(c.corpus_dir == "/tmp/c");
  CHECK(c.train.stop_grad_conditions);
  CHECK(c.corpus.rain.streaks_max == 3);
  CHECK(parse_config(R"({"seeds.data": 42})").corpus.seed == 42);
}

TEST_CASE("invalid configs are rejected naming the key") {
  CHECK(rejection(R"({"sample.S": 7})").find("S divides T") != std::string::npos);
  CHECK(rejection(R"({"sample.S": 7})").rfind("sample.S", 0) == 0);
  CHECK(rejection(R"({"patch.stride": 200})").rfind("patch.stride", 0) == 0);
  CHECK(rejection(R"({"train.lambda_cyc": -0.5})").rfind("train.lambda_cyc", 0) == 0);
  CHECK(rejection(R"({"train.lamda_cyc": 1})").rfind("train.lamda_cyc: unknown", 0) == 0);
  CHECK(rejection(R"({"train.batch_size": 2.5})").rfind("train.batch_size", 0) == 0);
  CHECK(rejection(R"({"seeds.global": -1})").rfind("seeds.global", 0) == 0);
  CHECK(rejection(R"({"optim.lr": "fast"})").rfind("optim.lr", 0) == 0);
  CHECK(rejection(R"({"model.widths": [8, 16]})").rfind("model.widths", 0) == 0);
  CHECK(rejection(R"({"schedule.beta_start": 0.5, "schedule.beta_end": 0.1})").rfind("schedule.beta_end", 0) == 0);
  CHECK_FALSE(rejection(R"([1, 2])").empty());
  CHECK_FALSE(rejection(R"({"sample.S": )").empty());
}

TEST_CASE("dump lists every key and parses back to itself") {
  const RunConfig c = parse_config(R"({"sample.S": 20, "optim.clip_norm": 1.5, "paths.outputs": "o"})");
  const std::string text = dump_config(c);
  for (const auto& key : config_keys()) CHECK(text.find('"' + key + '"') != std::string::npos);
  CHECK(dump_config(parse_config(text)) == text);
}
