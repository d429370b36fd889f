// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Closed-form forward corruption, ancestral and implicit reverse updates,
// and the strided timestep ladder used for accelerated sampling. All noise
// is supplied by the caller; every function here is pure.

#pragma once

#include "raindiff/ops.hpp"
#include "raindiff/schedule.hpp"
#include "raindiff/tensor.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace raindiff {

/// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
template <typename Scalar>
Tensor<Scalar> forward_sample(const Tensor<Scalar>& x0, int t, const Tensor<Scalar>& eps,
                              const NoiseSchedule& schedule) {
  require_same_shape(x0.shape(), eps.shape(), "forward_sample");
  const double ab = schedule.query(t).alpha_bar;
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor<Scalar> out(x0.shape());
  out.data() = (x0.data().template cast<double>() * a + eps.data().template cast<double>() * b)
                   .template cast<Scalar>();
  return out;
}

/// Differentiable batch version: sample n is corrupted at timesteps[n].
template <typename Scalar>
Var<Scalar> forward_sample(const Var<Scalar>& x0, std::span<const int> timesteps,
                           const Var<Scalar>& eps, const NoiseSchedule& schedule) {
  require_same_shape(x0.shape(), eps.shape(), "forward_sample");
  std::vector<Scalar> a, b;
  for (int t : timesteps) {
    const double ab = schedule.query(t).alpha_bar;
    a.push_back(static_cast<Scalar>(std::sqrt(ab)));
    b.push_back(static_cast<Scalar>(std::sqrt(1.0 - ab)));
  }
  return add(scale_per_sample<Scalar>(x0, a), scale_per_sample<Scalar>(eps, b));
}

/// One stochastic reverse step with sigma_t = sqrt(beta_t):
/// (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * z.
template <typename Scalar>
Tensor<Scalar> ancestral_step(const Tensor<Scalar>& x_t, int t, const Tensor<Scalar>& eps_hat,
                              const Tensor<Scalar>& z, const NoiseSchedule& schedule) {
  require_same_shape(x_t.shape(), eps_hat.shape(), "ancestral_step");
  require_same_shape(x_t.shape(), z.shape(), "ancestral_step");
  const auto c = schedule.query(t);
  const double k = c.beta / std::sqrt(1.0 - c.alpha_bar);
  const double inv = 1.0 / std::sqrt(c.alpha);
  const double sigma = std::sqrt(c.beta);
  Tensor<Scalar> out(x_t.shape());
  out.data() = ((x_t.data().template cast<double>() - eps_hat.data().template cast<double>() * k) *
                    inv +
                z.data().template cast<double>() * sigma)
                   .template cast<Scalar>();
  return out;
}

/// Deterministic implicit update from t to t_next (t_next < t, abar_0 = 1):
/// sqrt(abar_next) * (x_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
///   + sqrt(1 - abar_next) * eps_hat.
template <typename Scalar>
Tensor<Scalar> implicit_step(const Tensor<Scalar>& x_t, int t, int t_next,
                             const Tensor<Scalar>& eps_hat, const NoiseSchedule& schedule) {
  require_same_shape(x_t.shape(), eps_hat.shape(), "implicit_step");
  if (t_next < 0 || t_next >= t) {
    throw std::invalid_argument("implicit_step: t_next " + std::to_string(t_next) +
                                " must lie in 0.." + std::to_string(t - 1));
  }
  const double ab = schedule.query(t).alpha_bar;
  const double ab_next = schedule.alpha_bar(t_next);
  const double s = std::sqrt(ab_next) / std::sqrt(ab);
  const double k = std::sqrt(1.0 - ab_next) - s * std::sqrt(1.0 - ab);
  Tensor<Scalar> out(x_t.shape());
  out.data() = (x_t.data().template cast<double>() * s + eps_hat.data().template cast<double>() * k)
                   .template cast<Scalar>();
  return out;
}

/// Noise estimate consistent with the clean prediction
/// (x_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t) clamped to [-1, 1].
template <typename Scalar>
Tensor<Scalar> clamp_noise_estimate(const Tensor<Scalar>& x_t, int t, const Tensor<Scalar>& eps_hat,
                                    const NoiseSchedule& schedule) {
  require_same_shape(x_t.shape(), eps_hat.shape(), "clamp_noise_estimate");
  const double ab = schedule.query(t).alpha_bar;
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  const auto x = x_t.data().template cast<double>();
  const auto x0 = ((x - eps_hat.data().template cast<double>() * b) / a).cwiseMax(-1.0).cwiseMin(1.0);
  Tensor<Scalar> out(x_t.shape());
  out.data() = ((x - x0 * a) / b).template cast<Scalar>();
  return out;
}

/// Strided timestep subsequence tau_i = (i - 1) * T / S + 1, traversed from
/// i = S down to 1 with t_next = tau_{i-1} (0 after the last step).
struct TimestepPlan {
  int total_steps = 0;            // T
  std::vector<int> tau;           // ascending, size S
  std::vector<std::pair<int, int>> ladder;  // (t, t_next) in execution order

  int sampling_steps() const { return static_cast<int>(tau.size()); }
};

inline TimestepPlan make_plan(int total_steps, int sampling_steps) {
  if (sampling_steps < 1 || total_steps < 1) {
    throw std::invalid_argument("make_plan: need T >= 1 and S >= 1");
  }
  if (total_steps % sampling_steps != 0) {
    throw std::invalid_argument("make_plan: S divides T is required (T=" +
                                std::to_string(total_steps) +
                                ", S=" + std::to_string(sampling_steps) + ")");
  }
  const int stride = total_steps / sampling_steps;
  TimestepPlan plan;
  plan.total_steps = total_steps;
  for (int i = 1; i <= sampling_steps; ++i) plan.tau.push_back((i - 1) * stride + 1);
  for (int i = sampling_steps; i >= 1; --i) {
    const int t = (i - 1) * stride + 1;
    const int t_next = i > 1 ? (i - 2) * stride + 1 : 0;
    plan.ladder.emplace_back(t, t_next);
  }
  return plan;
}

}  // namespace raindiff
