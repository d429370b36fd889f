// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: one JSON object with flat dotted keys, every key
// optional. Unknown keys, type errors and violated invariants are rejected
// with the offending key named.

#pragma once

#include "raindiff/data.hpp"
#include "raindiff/sampler.hpp"
#include "raindiff/schedule.hpp"
#include "raindiff/trainer.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace raindiff {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  int schedule_T = 200;
  std::optional<double> beta_start;  // unset: 0.1 / T
  std::optional<double> beta_end;    // unset: 20 / T

  std::array<int, 3> widths{32, 64, 128};

  TrainConfig train;
  bool resume = true;

  Index patch_p = 128;
  Index patch_stride = 64;
  int sample_S = 10;
  bool sample_clamp_x0 = false;

  std::uint64_t seed_global = 1;  // model init and training streams
  std::uint64_t seed_data = 1;    // corpus synthesis and epoch order
  std::uint64_t seed_noise = 0;   // sampler x_T

  std::filesystem::path corpus_dir = "corpus";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path output_dir = "outputs";
  std::filesystem::path checkpoint;  // empty: <checkpoint_dir>/latest.ckpt

  CorpusConfig corpus;  // corpus.seed mirrors seed_data

  NoiseSchedule schedule() const;
  std::filesystem::path checkpoint_path() const;
  RestoreOptions restore_options(std::uint64_t seed, int threads) const;

  /// Throws ConfigError naming the key of the first violated invariant.
  void validate() const;
};

/// Every recognized key, in documentation order.
const std::vector<std::string>& config_keys();

/// Parses a JSON object; an empty document or "{}" yields the defaults.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);

/// The fully resolved configuration as pretty-printed JSON.
std::string dump_config(const RunConfig& config);

}  // namespace raindiff
