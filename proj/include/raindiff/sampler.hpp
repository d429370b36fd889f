// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Size-agnostic restoration: overlapping-patch noise fusion inside the
// implicit sampling loop.

#pragma once

#include "raindiff/diffusion.hpp"
#include "raindiff/models.hpp"

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace raindiff {

struct PatchGrid {
  Index height = 0;
  Index width = 0;
  Index p = 0;
  Index stride = 0;
  std::vector<std::pair<Index, Index>> locations;  // (top, left), row-major canonical order

  std::size_t size() const { return locations.size(); }
};

/// Per axis: multiples of stride up to size - p, plus size - p itself when
/// the multiples miss it. Images smaller than p use p = min(H, W, p) and
/// stride = min(stride, p). Throws if stride is outside 1..p.
PatchGrid build_patch_grid(Index height, Index width, Index p, Index stride);

/// Batched noise estimate for patches: (x_t, cond) are B x 3 x p x p.
using PatchEstimator = std::function<TensorF(const TensorF& x_t, const TensorF& cond, int t)>;

struct FuseOptions {
  Index patches_per_batch = 8;  // fixed chunking keeps results independent of `threads`
  int threads = 1;
};

/// Omega / M for one timestep; x_t and cond are 1 x 3 x H x W. Patches are
/// accumulated in the order of `grid.locations`.
TensorF fuse_noise_estimate(const PatchGrid& grid, const PatchEstimator& estimator, const TensorF& x_t,
                            const TensorF& cond, int t, const FuseOptions& options = {});

/// Per-pixel patch count M (1 x 1 x H x W).
TensorF coverage(const PatchGrid& grid);

struct RestoreOptions {
  Index p = 32;
  Index stride = 16;
  std::uint64_t seed = 0;
  bool clamp = true;      // final output to [-1, 1]
  bool clamp_x0 = false;  // clean prediction to [-1, 1] at every step
  FuseOptions fuse;
};

/// Implicit sampling from seeded x_T ~ N(0, I) conditioned on `cond`.
TensorF restore(const PatchEstimator& estimator, const TensorF& cond, const TimestepPlan& plan,
                const NoiseSchedule& schedule, const RestoreOptions& options);

/// Estimator backed by a noise-estimator parameter set; builds no graph.
PatchEstimator network_estimator(const ParamSet<float>& theta, const UNetConfig& cfg,
                                 const NoiseSchedule& schedule);

/// Rainy -> clean with theta_a. The generators are never consulted.
TensorF derain(const ModelBundle& models, const NoiseSchedule& schedule, const TensorF& rainy,
               int sampling_steps, const RestoreOptions& options);

/// Clean -> rainy with theta_b.
TensorF gen_rain(const ModelBundle& models, const NoiseSchedule& schedule, const TensorF& clean,
                 int sampling_steps, const RestoreOptions& options);

}  // namespace raindiff
