// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// raindiff <command> --config <path> [--seed N] [--out <path>]

#include "raindiff/selfcheck.hpp"
#include "raindiff/workflow.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace raindiff;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const char* seed_help) {
  cmd->add_option("--config", c.config, "JSON config with flat dotted keys (omit for defaults)");
  cmd->add_option("--seed", c.seed, seed_help);
  cmd->add_option("--out", c.out, "Output path");
}

RunConfig resolve(const Common& c) { return c.config.empty() ? parse_config("") : load_config(c.config); }

Checkpoint open_checkpoint(const RunConfig& cfg, const std::string& override_path) {
  const fs::path path = override_path.empty() ? cfg.checkpoint_path() : fs::path(override_path);
  return load_checkpoint(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raindiff: unsupervised diffusion deraining"};
  app.require_subcommand(1);

  Common synth_opts, train_opts, derain_opts, rain_opts, eval_opts, check_opts;
  std::string derain_in, rain_in, derain_ckpt, rain_ckpt, eval_ckpt, eval_corpus, eval_restored, eval_reference;
  bool print_config = false;

  auto* synth = app.add_subcommand("synth-data", "Write the procedural clean / rainy corpus");
  add_common(synth, synth_opts, "Overrides seeds.data");
  auto* train_cmd = app.add_subcommand("train", "Train all four networks");
  add_common(train_cmd, train_opts, "Overrides seeds.global");
  train_cmd->add_flag("--print-config", print_config, "Print the resolved config and exit");
  auto* derain_cmd = app.add_subcommand("derain", "Remove rain from a PNG or a directory of PNGs");
  add_common(derain_cmd, derain_opts, "Overrides seeds.noise");
  derain_cmd->add_option("--in", derain_in, "Input PNG or directory")->required();
  derain_cmd->add_option("--checkpoint", derain_ckpt, "Overrides paths.checkpoint");
  auto* rain_cmd = app.add_subcommand("gen-rain", "Synthesize rain on a PNG or a directory of PNGs");
  add_common(rain_cmd, rain_opts, "Overrides seeds.noise");
  rain_cmd->add_option("--in", rain_in, "Input PNG or directory")->required();
  rain_cmd->add_option("--checkpoint", rain_ckpt, "Overrides paths.checkpoint");
  auto* eval_cmd = app.add_subcommand("eval", "Derain the eval split and report PSNR / SSIM");
  add_common(eval_cmd, eval_opts, "Overrides seeds.noise");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Overrides paths.checkpoint");
  eval_cmd->add_option("--corpus", eval_corpus, "Overrides paths.corpus");
  auto* restored_opt =
      eval_cmd->add_option("--restored", eval_restored, "Score existing PNGs instead of deraining the eval split");
  eval_cmd->add_option("--reference", eval_reference, "Ground-truth PNGs matched by file name")->needs(restored_opt);
  restored_opt->needs("--reference");
  auto* check_cmd = app.add_subcommand("check", "Run the invariant self-test suite");
  add_common(check_cmd, check_opts, "Seed of the randomized checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      RunConfig cfg = resolve(synth_opts);
      if (synth_opts.seed) cfg.corpus.seed = cfg.seed_data = *synth_opts.seed;
      if (!synth_opts.out.empty()) cfg.corpus_dir = synth_opts.out;
      const auto manifest = run_synth(cfg);
      std::cout << "wrote " << manifest.size() << " images to " << cfg.corpus_dir.string() << '\n';
    } else if (train_cmd->parsed()) {
      RunConfig cfg = resolve(train_opts);
      if (train_opts.seed) cfg.seed_global = *train_opts.seed;
      if (!train_opts.out.empty()) cfg.checkpoint_dir = train_opts.out;
      if (print_config) {
        std::cout << dump_config(cfg) << '\n';
        return 0;
      }
      const TrainSummary s = run_train(cfg, &std::cout);
      std::cout << "trained steps " << s.start_step << ".." << s.end_step << "; last checkpoint "
                << s.checkpoint.string() << '\n';
    } else if (derain_cmd->parsed() || rain_cmd->parsed()) {
      const bool rain = rain_cmd->parsed();
      const Common& opts = rain ? rain_opts : derain_opts;
      const RunConfig cfg = resolve(opts);
      if (opts.out.empty()) throw ConfigError("--out is required");
      const Checkpoint ckpt = open_checkpoint(cfg, rain ? rain_ckpt : derain_ckpt);
      run_translate(cfg, ckpt, rain ? rain_in : derain_in, opts.out, opts.seed.value_or(cfg.seed_noise), rain);
    } else if (eval_cmd->parsed()) {
      RunConfig cfg = resolve(eval_opts);
      if (eval_opts.seed) cfg.seed_noise = *eval_opts.seed;
      if (!eval_restored.empty()) {
        const MetricReport r = evaluate_dirs(eval_restored, eval_reference);
        if (!eval_opts.out.empty()) {
          std::ofstream out(eval_opts.out);
          r.write_tsv(out);
          if (!out) throw std::runtime_error("cannot write " + eval_opts.out);
        }
        r.write_tsv(std::cout);
        return 0;
      }
      const Checkpoint ckpt = open_checkpoint(cfg, eval_ckpt);
      const fs::path out = eval_opts.out.empty() ? cfg.output_dir / "eval" : fs::path(eval_opts.out);
      const EvalResult r = run_eval(cfg, ckpt, eval_corpus.empty() ? cfg.corpus_dir : fs::path(eval_corpus), out);
      r.derained.write_tsv(std::cout);
      std::cout << std::fixed << std::setprecision(4) << "rainy input: psnr " << r.rainy.mean_psnr() << " ssim "
                << r.rainy.mean_ssim() << "\nderained:    psnr " << r.derained.mean_psnr() << " ssim "
                << r.derained.mean_ssim() << '\n';
    } else if (check_cmd->parsed()) {
      const RunConfig cfg = resolve(check_opts);
      bool ok = true;
      for (const auto& r : run_self_checks(check_opts.seed.value_or(cfg.seed_global), cfg.schedule())) {
        ok = ok && r.passed;
        std::printf("%-4s %-32s %.3e (tol %.1e) %s\n", r.passed ? "ok" : "FAIL", r.name.c_str(), r.value,
                    r.tolerance, r.detail.c_str());
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "raindiff: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
