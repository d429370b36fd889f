// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/trainer.hpp"

#include "raindiff/diffusion.hpp"
#include "raindiff/ntb.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace raindiff {

PatchMask sample_patch_mask(Index height, Index width, Index p, Rng& rng) {
  if (height < 1 || width < 1 || p < 1) {
    throw std::invalid_argument("sample_patch_mask: sizes must be positive");
  }
  if (height < p || width < p) return {0, 0, std::min(height, width)};
  PatchMask m;
  m.p = p;
  m.top = rng.uniform_int(0, height - p);
  m.left = rng.uniform_int(0, width - p);
  return m;
}

void Adam::attach(std::span<const ParamSet<float>* const> sets) {
  for (const auto* set : sets) {
    for (const auto& [name, v] : set->entries()) {
      const std::string key = set->qualified(name);
      m_.insert_or_assign(key, TensorF(v.shape()));
      v_.insert_or_assign(key, TensorF(v.shape()));
    }
  }
}

void Adam::step(std::span<ParamSet<float>* const> sets) {
  ++steps_;
  double sq = 0.0;
  for (const auto* set : sets) {
    for (const auto& [name, v] : set->entries()) {
      if (v.has_grad()) sq += v.grad().data().template cast<double>().squaredNorm();
    }
  }
  last_norm_ = std::sqrt(sq);
  const double clip =
      config_.clip_norm > 0.0 && last_norm_ > config_.clip_norm ? config_.clip_norm / last_norm_ : 1.0;

  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (auto* set : sets) {
    for (const auto& [name, var] : set->entries()) {
      if (!var.has_grad()) continue;
      const std::string key = set->qualified(name);
      auto [mit, m_new] = m_.try_emplace(key, var.shape());
      auto [vit, v_new] = v_.try_emplace(key, var.shape());
      TensorF& m = mit->second;
      TensorF& v = vit->second;
      TensorF& p = set->value(name);
      const TensorF& g = var.grad();
      for (Index i = 0; i < p.size(); ++i) {
        const double gi = clip * static_cast<double>(g[i]);
        const double mi = b1 * m[i] + (1.0 - b1) * gi;
        const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        p[i] = static_cast<float>(p[i] - config_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + config_.eps));
      }
    }
  }
}

RngStreams RngStreams::from_seed(std::uint64_t seed) {
  return {Rng(mix_seed(seed, 101)), Rng(mix_seed(seed, 102)), Rng(mix_seed(seed, 103)),
          Rng(mix_seed(seed, 104))};
}

TrainState TrainState::fresh(const ModelBundle& models, const NoiseSchedule& schedule,
                             const TrainConfig& config, std::uint64_t seed) {
  TrainState s;
  s.adam = Adam(config.adam);
  s.adam.attach(models.sets());
  s.rng = RngStreams::from_seed(seed);
  s.schedule = schedule;
  s.lambda_cyc = config.lambda_cyc;
  return s;
}

NonFiniteLoss::NonFiniteLoss(std::string term, std::uint64_t step)
    : std::runtime_error("non-finite loss term " + term + " at step " + std::to_string(step)),
      term_(std::move(term)) {}

namespace {

struct NoiseDraw {
  std::vector<int> t;
  VarF eps;
};

}  // namespace

LossGraph build_losses(const ModelBundle& models, TrainState& state, const TrainConfig& config,
                       const TensorF& x, const TensorF& y, const LossProbe& probe) {
  require_same_shape(x.shape(), y.shape(), "build_losses");
  if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("build_losses: expected N x 3 x H x W, got " + to_string(x.shape()));
  const Index n = x.dim(0), h = x.dim(2), w = x.dim(3);

  LossGraph out;
  std::vector<Index> tops(static_cast<std::size_t>(n)), lefts(static_cast<std::size_t>(n));
  Index p = 0;
  for (Index i = 0; i < n; ++i) {
    const PatchMask m = sample_patch_mask(h, w, config.patch, state.rng.mask);
    tops[static_cast<std::size_t>(i)] = m.top;
    lefts[static_cast<std::size_t>(i)] = m.left;
    p = m.p;
    if (i == 0) out.first_masks = {m, m};
  }
  if (p % UNetConfig::kSizeMultiple != 0) {
    throw std::invalid_argument("patch side " + std::to_string(p) + " is not a multiple of " +
                                std::to_string(UNetConfig::kSizeMultiple));
  }

  const VarF xv = VarF::constant(x), yv = VarF::constant(y);
  const auto cyc = cycle_pass(models.phi_a, models.phi_b, models.generator, xv, yv);
  const auto cut = [&](const VarF& v) { return crop<float>(v, tops, lefts, p, p); };
  const auto cond = [&](const VarF& v) {
    if (probe.zero_conditions) return VarF::constant(TensorF(v.shape()));
    return config.stop_grad_conditions ? stop_gradient(v) : v;
  };
  const auto target = [&](const VarF& v) { return config.stop_grad_conditions ? stop_gradient(v) : v; };

  const VarF x_i = cut(xv), y_i = cut(yv);
  const VarF xp_i = cut(cyc.x_prime), xpp_i = cut(cyc.x_dprime);
  const VarF yp_i = cut(cyc.y_prime), ypp_i = cut(cyc.y_dprime);

  const int steps = state.schedule.steps();
  const auto draw_t = [&] {
    std::vector<int> t(static_cast<std::size_t>(n));
    for (auto& v : t) v = static_cast<int>(state.rng.timestep.uniform_int(1, steps));
    return t;
  };
  const auto draw_eps = [&] { return VarF::constant(state.rng.noise.normal_tensor<float>({n, 3, p, p})); };
  // draws[k] feeds term k; A terms are 0 and 3, B terms 1 and 2
  std::array<NoiseDraw, 4> draws;
  draws[0].t = draw_t();
  draws[1].t = draw_t();
  draws[0].eps = draw_eps();
  draws[1].eps = draw_eps();
  if (config.independent_eps_per_term) {
    draws[2].t = draw_t();
    draws[3].t = draw_t();
    draws[2].eps = draw_eps();
    draws[3].eps = draw_eps();
  } else {
    draws[2] = draws[1];
    draws[3] = draws[0];
  }

  const auto eps_term = [&](const ParamSet<float>& theta, const VarF& x0, const VarF& c,
                            const NoiseDraw& d) {
    const VarF noisy = forward_sample(x0, d.t, d.eps, state.schedule);
    return mse(predict_noise(theta, models.estimator, noisy, c, d.t, state.schedule), d.eps);
  };
  out.terms[0] = eps_term(models.theta_a, x_i, cond(xp_i), draws[0]);
  out.terms[1] = eps_term(models.theta_b, target(xp_i), cond(xpp_i), draws[1]);
  out.terms[2] = eps_term(models.theta_b, y_i, cond(yp_i), draws[2]);
  out.terms[3] = eps_term(models.theta_a, target(yp_i), cond(ypp_i), draws[3]);
  out.terms[4] = cycle_loss(xv, cyc.x_dprime, yv, cyc.y_dprime);

  std::vector<VarF> summed(out.terms.begin(), out.terms.begin() + 4);
  std::vector<double> weights(4, 1.0);
  if (state.lambda_cyc != 0.0) {
    summed.push_back(out.terms[4]);
    weights.push_back(state.lambda_cyc);
  }
  out.total = weighted_sum<float>(summed, weights);

  auto& b = out.breakdown;
  b.err_A_clean = out.terms[0].value().item();
  b.err_B_fake_rain = out.terms[1].value().item();
  b.err_B_rain = out.terms[2].value().item();
  b.err_A_fake_clean = out.terms[3].value().item();
  b.cyc = out.terms[4].value().item();
  b.total = out.total.value().item();
  return out;
}

LossBreakdown training_step(ModelBundle& models, TrainState& state, const TrainConfig& config,
                            const TensorF& x, const TensorF& y) {
  for (auto* set : models.sets()) set->zero_grad();
  LossGraph g = build_losses(models, state, config, x, y);
  const auto parts = g.breakdown.components();
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (!std::isfinite(parts[k])) throw NonFiniteLoss(LossBreakdown::kNames[k], state.step);
  }
  if (!std::isfinite(g.breakdown.total)) throw NonFiniteLoss("total", state.step);
  backward(g.total);
  state.adam.step(models.sets());
  ++state.step;
  return g.breakdown;
}

std::string training_log_header() {
  return "step\terr_A_clean\terr_B_fake_rain\terr_B_rain\terr_A_fake_clean\tcyc\ttotal\twall_ms\n";
}

void train(ModelBundle& models, TrainState& state, const TrainConfig& config,
           const BatchSource& batches, std::uint64_t until_step, const TrainHooks& hooks) {
  bool saved = false;
  while (state.step < until_step) {
    const auto start = std::chrono::steady_clock::now();
    auto [x, y] = batches(state.step, state.rng.data);
    const LossBreakdown b = training_step(models, state, config, x, y);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (hooks.log) {
      std::ostringstream line;
      line << state.step << std::setprecision(9);
      for (double v : b.components()) line << '\t' << v;
      line << '\t' << b.total << '\t' << std::fixed << std::setprecision(1) << ms << '\n';
      *hooks.log << line.str() << std::flush;
    }
    saved = false;
    if (hooks.checkpoint && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      hooks.checkpoint(models, state);
      saved = true;
    }
  }
  if (hooks.checkpoint && !saved) hooks.checkpoint(models, state);
}

}  // namespace raindiff
