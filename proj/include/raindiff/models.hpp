// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Conditional noise estimators (time-conditioned U-Net over [x_t, cond]) and
// non-diffusive generators (plain U-Net with tanh output).

#pragma once

#include "raindiff/ops.hpp"
#include "raindiff/params.hpp"
#include "raindiff/schedule.hpp"

#include <array>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace raindiff {

struct UNetConfig {
  int in_channels = 6;
  int out_channels = 3;
  std::array<int, 3> widths{32, 64, 128};
  int blocks_per_level = 2;
  int time_dim = 128;  // 0 disables the time embedding
  int groups = 8;
  bool tanh_output = false;

  /// Spatial sizes must be multiples of this (two stride-2 levels).
  static constexpr int kSizeMultiple = 4;

  void validate() const;
};

UNetConfig estimator_config(std::array<int, 3> widths = {32, 64, 128});
UNetConfig generator_config(std::array<int, 3> widths = {32, 64, 128});

struct ForwardOptions {
  /// Residual blocks ("enc1.res0", "dec0.res0", ...) replaced by the identity.
  std::set<std::string> bypass;
};

/// Standard sinusoidal embedding, [sin(t f_i), cos(t f_i)] with
/// f_i = 10000^(-i / (dim/2)). Returns N x dim.
template <typename Scalar>
Tensor<Scalar> timestep_embedding(std::span<const int> timesteps, int dim);

/// He-normal convolution and linear weights, zero biases, unit GN gain,
/// and zero weights on the second convolution of every residual block.
template <typename Scalar>
ParamSet<Scalar> init_unet(const UNetConfig& cfg, std::uint64_t seed, const std::string& prefix);

/// Raw U-Net evaluation. `timesteps` must have one entry per sample when
/// the config has a time embedding and is ignored otherwise.
template <typename Scalar>
Var<Scalar> unet_forward(const ParamSet<Scalar>& params, const UNetConfig& cfg, const Var<Scalar>& x,
                         std::span<const int> timesteps, const ForwardOptions& opts = {});

/// eps_theta(x_t, cond, t) for a batch; conditioning by channel concatenation.
template <typename Scalar>
Var<Scalar> predict_noise(const ParamSet<Scalar>& params, const UNetConfig& cfg,
                          const Var<Scalar>& x_t, const Var<Scalar>& cond,
                          std::span<const int> timesteps, const NoiseSchedule& schedule,
                          const ForwardOptions& opts = {});

/// G_phi(img), bounded to [-1, 1].
template <typename Scalar>
Var<Scalar> generate(const ParamSet<Scalar>& params, const UNetConfig& cfg, const Var<Scalar>& img,
                     const ForwardOptions& opts = {});

/// The four disjoint parameter sets of the method.
struct ModelBundle {
  UNetConfig estimator;
  UNetConfig generator;
  ParamSet<float> theta_a{"theta_a"};  // deraining noise estimator
  ParamSet<float> theta_b{"theta_b"};  // rain-generation noise estimator
  ParamSet<float> phi_a{"phi_a"};      // clean -> rainy generator
  ParamSet<float> phi_b{"phi_b"};      // rainy -> clean generator

  static ModelBundle initialize(std::array<int, 3> widths, std::uint64_t seed);

  std::array<ParamSet<float>*, 4> sets() { return {&theta_a, &theta_b, &phi_a, &phi_b}; }
  std::array<const ParamSet<float>*, 4> sets() const {
    return {&theta_a, &theta_b, &phi_a, &phi_b};
  }

  ModelBundle clone() const;
  bool identical(const ModelBundle& other) const;
};

}  // namespace raindiff
