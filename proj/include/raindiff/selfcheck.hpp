// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Invariant self-tests shared by the `check` command and the test suites.

#pragma once

#include "raindiff/schedule.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace raindiff {

struct CheckResult {
  std::string name;
  double value = 0.0;      // measured error / statistic
  double tolerance = 0.0;  // pass when value <= tolerance
  bool passed = false;
  std::string detail;
};

/// Central-difference checks (64-bit) of every differentiable primitive,
/// each at `points` random evaluation points. Value is the max relative error.
std::vector<CheckResult> primitive_gradient_checks(std::uint64_t seed, int points = 10,
                                                   double tolerance = 1e-5);

/// 32-bit analytic gradients of both model forward passes against a 64-bit
/// central-difference oracle on 16 x 16 inputs, sampled entries per tensor.
/// Entries far below their tensor's gradient scale are judged against 1% of it.
std::vector<CheckResult> model_gradient_checks(std::uint64_t seed, int entries_per_tensor = 3,
                                               double tolerance = 1e-3);

/// The quick invariant suite run by `raindiff check`: schedule monotonicity,
/// implicit-step round trip, constant-estimator fusion exactness, gradient spot checks.
std::vector<CheckResult> run_self_checks(std::uint64_t seed, const NoiseSchedule& schedule);

}  // namespace raindiff
