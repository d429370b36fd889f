// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Non-diffusive translation branch: the two-generator cycle and its L1
// consistency loss. Training-time only.

#pragma once

#include "raindiff/models.hpp"
#include "raindiff/ops.hpp"

namespace raindiff {

template <typename Scalar>
struct CycleOutputs {
  Var<Scalar> x_prime;   // G_A(x), generated rainy
  Var<Scalar> x_dprime;  // G_B(G_A(x)), reconstructed clean
  Var<Scalar> y_prime;   // G_B(y), generated clean
  Var<Scalar> y_dprime;  // G_A(G_B(y)), reconstructed rainy
};

/// Runs both cycles with arbitrary image -> image callables.
template <typename Scalar, typename GenA, typename GenB>
CycleOutputs<Scalar> cycle_pass(GenA&& gen_a, GenB&& gen_b, const Var<Scalar>& x,
                                const Var<Scalar>& y) {
  CycleOutputs<Scalar> out;
  out.x_prime = gen_a(x);
  out.x_dprime = gen_b(out.x_prime);
  out.y_prime = gen_b(y);
  out.y_dprime = gen_a(out.y_prime);
  return out;
}

template <typename Scalar>
CycleOutputs<Scalar> cycle_pass(const ParamSet<Scalar>& phi_a, const ParamSet<Scalar>& phi_b,
                                const UNetConfig& cfg, const Var<Scalar>& x, const Var<Scalar>& y) {
  return cycle_pass<Scalar>([&](const Var<Scalar>& img) { return generate(phi_a, cfg, img); },
                            [&](const Var<Scalar>& img) { return generate(phi_b, cfg, img); }, x, y);
}

/// mean|x'' - x| + mean|y'' - y|.
template <typename Scalar>
Var<Scalar> cycle_loss(const Var<Scalar>& x, const Var<Scalar>& x_dprime, const Var<Scalar>& y,
                       const Var<Scalar>& y_dprime) {
  return add(mae(x_dprime, x), mae(y_dprime, y));
}

}  // namespace raindiff
