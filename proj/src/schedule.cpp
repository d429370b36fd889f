// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/schedule.hpp"

#include <stdexcept>
#include <string>

namespace raindiff {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule: T must be >= 1, got " + std::to_string(steps));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1, got " +
                                std::to_string(beta_start) + ", " + std::to_string(beta_end));
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    betas[static_cast<std::size_t>(i)] =
        steps == 1 ? beta_start
                   : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
  }
  NoiseSchedule s = from_betas(std::move(betas));
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  return s;
}

NoiseSchedule NoiseSchedule::scaled_linear(int steps) {
  if (steps <= 20) throw std::invalid_argument("scaled_linear: need T > 20, got " + std::to_string(steps));
  return linear(steps, 0.1 / steps, 20.0 / steps);
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("schedule: empty beta sequence");
  NoiseSchedule s;
  s.alpha_bar_.reserve(betas.size() + 1);
  s.alpha_bar_.push_back(1.0);
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) {
      throw std::invalid_argument("schedule: beta out of (0, 1): " + std::to_string(b));
    }
    s.alpha_bar_.push_back(s.alpha_bar_.back() * (1.0 - b));
  }
  s.beta_start_ = betas.front();
  s.beta_end_ = betas.back();
  s.beta_ = std::move(betas);
  return s;
}

StepCoefficients NoiseSchedule::query(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside 1.." +
                            std::to_string(steps()));
  }
  const double beta = beta_[static_cast<std::size_t>(t - 1)];
  return {beta, 1.0 - beta, alpha_bar_[static_cast<std::size_t>(t)]};
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) {
    throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside 0.." +
                            std::to_string(steps()));
  }
  return alpha_bar_[static_cast<std::size_t>(t)];
}

}  // namespace raindiff
