// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/workflow.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <string>
#include <thread>

namespace raindiff {

namespace fs = std::filesystem;

int worker_threads() {
  const char* env = std::getenv("RAINDIFF_THREADS");
  long n = 0;
  if (env != nullptr && *env != '\0') {
    char* end = nullptr;
    n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 0) throw ConfigError(std::string("RAINDIFF_THREADS: not a non-negative integer: ") + env);
  }
  if (n == 0) n = static_cast<long>(std::max(1u, std::thread::hardware_concurrency()));
  return static_cast<int>(n);
}

std::vector<ManifestEntry> run_synth(const RunConfig& config) {
  fs::create_directories(config.corpus_dir);
  return synth_corpus(config.corpus, config.corpus_dir);
}

TrainSummary run_train(const RunConfig& config, std::ostream* progress) {
  const auto dataset = UnpairedDataset::from_corpus(
      config.corpus_dir, DatasetConfig{.resolution = config.train.resolution, .flip = true, .seed = config.seed_data});
  fs::create_directories(config.checkpoint_dir);
  const fs::path latest = config.checkpoint_dir / "latest.ckpt";
  const fs::path log_path = config.checkpoint_dir / "train_log.tsv";

  ModelBundle models;
  TrainState state;
  const bool resuming = config.resume && fs::exists(latest);
  if (resuming) {
    Checkpoint ckpt = load_checkpoint(latest);
    if (ckpt.state.schedule.betas() != config.schedule().betas()) {
      throw ConfigError("schedule.T: checkpoint " + latest.string() + " was trained with a different schedule");
    }
    if (ckpt.models.estimator.widths != config.widths) {
      throw ConfigError("model.widths: checkpoint " + latest.string() + " has different widths");
    }
    models = std::move(ckpt.models);
    state = std::move(ckpt.state);
    state.adam.set_config(config.train.adam);
    state.lambda_cyc = config.train.lambda_cyc;
  } else {
    models = ModelBundle::initialize(config.widths, config.seed_global);
    state = TrainState::fresh(models, config.schedule(), config.train, config.seed_global);
  }

  std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  if (!resuming) log << training_log_header();

  TrainSummary summary;
  summary.start_step = state.step;
  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint = [&](const ModelBundle& m, const TrainState& s) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%06llu.ckpt", static_cast<unsigned long long>(s.step));
    save_checkpoint(config.checkpoint_dir / name, m, s);
    save_checkpoint(latest, m, s);
    summary.checkpoint = config.checkpoint_dir / name;
    if (progress) *progress << "step " << s.step << ": saved " << summary.checkpoint.string() << '\n';
  };
  const int batch = config.train.batch_size;
  train(models, state, config.train,
        [&](std::uint64_t step, Rng& rng) { return dataset.next_batch(step, batch, rng); },
        std::max(config.train.max_steps, state.step), hooks);
  summary.end_step = state.step;
  return summary;
}

namespace {

int checked_steps(const RunConfig& config, const Checkpoint& checkpoint) {
  const int T = checkpoint.state.schedule.steps();
  if (config.sample_S < 1 || T % config.sample_S != 0) {
    throw ConfigError("sample.S: S divides T is required (checkpoint T=" + std::to_string(T) +
                      ", S=" + std::to_string(config.sample_S) + ")");
  }
  return config.sample_S;
}

TensorF translate(const RunConfig& config, const Checkpoint& checkpoint, const TensorF& img, std::uint64_t seed,
                  bool rain) {
  const int S = checked_steps(config, checkpoint);
  const RestoreOptions opts = config.restore_options(seed, worker_threads());
  return rain ? gen_rain(checkpoint.models, checkpoint.state.schedule, img, S, opts)
              : derain(checkpoint.models, checkpoint.state.schedule, img, S, opts);
}

}  // namespace

void run_translate(const RunConfig& config, const Checkpoint& checkpoint, const fs::path& in, const fs::path& out,
                   std::uint64_t seed, bool rain) {
  if (fs::is_directory(in)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(in)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no PNG files in " + in.string());
    fs::create_directories(out);
    for (const auto& f : files) save_image(translate(config, checkpoint, load_image(f), seed, rain), out / f.filename());
  } else {
    if (!fs::exists(in)) throw std::runtime_error("input not found: " + in.string());
    save_image(translate(config, checkpoint, load_image(in), seed, rain), out);
  }
}

EvalResult run_eval(const RunConfig& config, const Checkpoint& checkpoint, const fs::path& corpus_dir,
                    const fs::path& out_dir) {
  const auto manifest = read_manifest(corpus_dir);
  std::vector<std::pair<std::string, std::string>> pairs;  // (clean, rainy)
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (manifest[i].role != "eval_clean") continue;
    if (i + 1 >= manifest.size() || manifest[i + 1].role != "eval_rainy") {
      throw std::runtime_error("manifest: eval_clean " + manifest[i].path + " has no eval_rainy partner");
    }
    pairs.emplace_back(manifest[i].path, manifest[i + 1].path);
  }
  if (pairs.empty()) throw std::runtime_error("manifest in " + corpus_dir.string() + " has no eval pairs");

  fs::create_directories(out_dir / "derained");
  EvalResult result;
  for (const auto& [clean_path, rainy_path] : pairs) {
    const TensorF clean = load_image(corpus_dir / clean_path);
    const TensorF rainy = load_image(corpus_dir / rainy_path);
    const TensorF restored = quantize(translate(config, checkpoint, rainy, config.seed_noise, false));
    const std::string name = fs::path(rainy_path).filename().string();
    save_image(restored, out_dir / "derained" / name);
    result.derained.rows.push_back({name, psnr(restored, clean), ssim(restored, clean)});
    result.rainy.rows.push_back({name, psnr(rainy, clean), ssim(rainy, clean)});
  }
  std::ofstream d(out_dir / "eval_derained.tsv"), r(out_dir / "eval_rainy.tsv");
  result.derained.write_tsv(d);
  result.rainy.write_tsv(r);
  if (!d || !r) throw std::runtime_error("cannot write eval reports under " + out_dir.string());
  return result;
}

}  // namespace raindiff
