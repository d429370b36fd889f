// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

namespace raindiff {

/// Per-step values of a constant variance schedule at one timestep.
struct StepCoefficients {
  double beta;
  double alpha;
  double alpha_bar;
};

/// beta_t, alpha_t = 1 - beta_t and the running product alpha_bar_t for
/// t = 1..T. Immutable after construction.
class NoiseSchedule {
 public:
  /// Linear interpolation of beta from beta_start to beta_end, both inclusive.
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);

  /// linear(T, 0.1 / T, 20 / T): the T = 1000 endpoints 1e-4 and 0.02 with
  /// the total noise kept fixed for other T. Needs T > 20.
  static NoiseSchedule scaled_linear(int steps);

  /// Builds a schedule from explicit betas (each in (0, 1)).
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  /// Stored values at 1 <= t <= T; throws std::out_of_range otherwise.
  StepCoefficients query(int t) const;

  /// alpha_bar at 0 <= t <= T, with alpha_bar(0) == 1.
  double alpha_bar(int t) const;

  const std::vector<double>& betas() const { return beta_; }

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;  // alpha_bar_[0] == 1
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
};

}  // namespace raindiff
