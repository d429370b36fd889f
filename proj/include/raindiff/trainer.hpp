// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Joint unsupervised training: patch masks, the four conditional noise
// losses on pseudo-pairs, the weighted cycle loss and Adam updates over all
// four parameter sets.

#pragma once

#include "raindiff/models.hpp"
#include "raindiff/rng.hpp"
#include "raindiff/schedule.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

namespace raindiff {

/// Square window of side p at (top, left).
struct PatchMask {
  Index top = 0;
  Index left = 0;
  Index p = 0;
};

/// Uniform top-left position of a p x p window inside H x W. When the image
/// is smaller than p in either direction the whole image is used, with
/// p = min(H, W).
PatchMask sample_patch_mask(Index height, Index width, Index p, Rng& rng);

struct AdamConfig {
  double lr = 2e-5;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global-norm clipping threshold, 0 disables
};

/// Bias-corrected Adam with moments keyed by qualified parameter name.
/// Parameters without a gradient are left untouched.
class Adam {
 public:
  using Moments = std::map<std::string, TensorF>;

  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Zero moments for every parameter of `sets`.
  void attach(std::span<const ParamSet<float>* const> sets);

  void step(std::span<ParamSet<float>* const> sets);

  const AdamConfig& config() const { return config_; }
  void set_config(const AdamConfig& config) { config_ = config; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }
  Moments& first() { return m_; }
  Moments& second() { return v_; }
  const Moments& first() const { return m_; }
  const Moments& second() const { return v_; }
  double last_grad_norm() const { return last_norm_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  Moments m_, v_;
  double last_norm_ = 0.0;
};

/// Independent random streams of a training run.
struct RngStreams {
  Rng mask;
  Rng timestep;
  Rng noise;
  Rng data;

  static RngStreams from_seed(std::uint64_t seed);
  std::array<Rng*, 4> all() { return {&mask, &timestep, &noise, &data}; }
  std::array<const Rng*, 4> all() const { return {&mask, &timestep, &noise, &data}; }
  friend bool operator==(const RngStreams&, const RngStreams&) = default;
};

struct TrainConfig {
  int batch_size = 4;
  int resolution = 32;  // both images are brought to this square size
  int patch = 128;      // p
  double lambda_cyc = 1.0;
  bool stop_grad_conditions = false;
  bool independent_eps_per_term = false;
  AdamConfig adam;
  std::uint64_t max_steps = 5000;
  std::uint64_t checkpoint_every = 500;
};

struct TrainState {
  std::uint64_t step = 0;
  Adam adam;
  RngStreams rng;
  NoiseSchedule schedule = NoiseSchedule::scaled_linear(200);
  double lambda_cyc = 1.0;

  static TrainState fresh(const ModelBundle& models, const NoiseSchedule& schedule,
                          const TrainConfig& config, std::uint64_t seed);
};

struct LossBreakdown {
  double err_A_clean = 0.0;       // eps_A(x_i | x'_i)
  double err_B_fake_rain = 0.0;   // eps_B(x'_i | x''_i)
  double err_B_rain = 0.0;        // eps_B(y_i | y'_i)
  double err_A_fake_clean = 0.0;  // eps_A(y'_i | y''_i)
  double cyc = 0.0;
  double total = 0.0;             // the optimized scalar

  std::array<double, 5> components() const {
    return {err_A_clean, err_B_fake_rain, err_B_rain, err_A_fake_clean, cyc};
  }
  static constexpr std::array<const char*, 5> kNames{"err_A_clean", "err_B_fake_rain", "err_B_rain",
                                                     "err_A_fake_clean", "cyc"};
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::string term, std::uint64_t step);
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// Testing knobs for the loss graph.
struct LossProbe {
  bool zero_conditions = false;  // replace every condition image with zeros
};

struct LossGraph {
  std::array<VarF, 5> terms;  // in LossBreakdown order
  VarF total;
  LossBreakdown breakdown;
  std::array<PatchMask, 2> first_masks{};  // masks of sample 0 (x, y share it)
};

/// Draws masks, timesteps and noise from `state.rng` and builds the full
/// objective for one batch without touching gradients or parameters.
/// x and y are N x 3 x R x R.
LossGraph build_losses(const ModelBundle& models, TrainState& state, const TrainConfig& config,
                       const TensorF& x, const TensorF& y, const LossProbe& probe = {});

/// One optimization step. Throws NonFiniteLoss (before any update) if a
/// term is not finite.
LossBreakdown training_step(ModelBundle& models, TrainState& state, const TrainConfig& config,
                            const TensorF& x, const TensorF& y);

/// Supplies the (clean, rainy) batch for a given step from the data stream.
using BatchSource = std::function<std::pair<TensorF, TensorF>(std::uint64_t step, Rng& data)>;

struct TrainHooks {
  std::ostream* log = nullptr;  // one TSV line per step
  std::function<void(const ModelBundle&, const TrainState&)> checkpoint;
};

/// Runs steps until `state.step == until_step`; checkpoints every
/// `config.checkpoint_every` steps and at the end.
void train(ModelBundle& models, TrainState& state, const TrainConfig& config,
           const BatchSource& batches, std::uint64_t until_step, const TrainHooks& hooks = {});

/// Header of the per-step training log.
std::string training_log_header();

}  // namespace raindiff
