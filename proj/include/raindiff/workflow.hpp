// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end workflows behind the command-line tool.

#pragma once

#include "raindiff/checkpoint.hpp"
#include "raindiff/config.hpp"
#include "raindiff/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace raindiff {

/// RAINDIFF_THREADS, with 0 or unset meaning the hardware concurrency.
int worker_threads();

/// Writes the procedural corpus to `config.corpus_dir`.
std::vector<ManifestEntry> run_synth(const RunConfig& config);

struct TrainSummary {
  std::uint64_t start_step = 0;
  std::uint64_t end_step = 0;
  std::filesystem::path checkpoint;
};

/// Trains to `train.max_steps`, resuming from latest.ckpt when present and
/// `train.resume` is set. Writes step_NNNNNN.ckpt, latest.ckpt and
/// train_log.tsv under the checkpoint directory.
TrainSummary run_train(const RunConfig& config, std::ostream* progress = nullptr);

/// Translates one PNG or every PNG of a directory. rain = false derains with
/// theta_a; rain = true synthesizes rain with theta_b.
void run_translate(const RunConfig& config, const Checkpoint& checkpoint, const std::filesystem::path& in,
                   const std::filesystem::path& out, std::uint64_t seed, bool rain);

struct EvalResult {
  MetricReport derained;  // derained vs ground truth
  MetricReport rainy;     // rainy input vs ground truth
};

/// Derains every eval pair of the corpus manifest, saves the results under
/// `out_dir`/derained and writes eval_derained.tsv and eval_rainy.tsv.
EvalResult run_eval(const RunConfig& config, const Checkpoint& checkpoint, const std::filesystem::path& corpus_dir,
                    const std::filesystem::path& out_dir);

}  // namespace raindiff
