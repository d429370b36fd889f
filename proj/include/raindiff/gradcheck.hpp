// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "raindiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace raindiff {

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every entry; otherwise this many entries per input, chosen with `seed`.
  Index entries_per_input = 0;
  std::uint64_t seed = 0;
  // Denominator floor as a fraction of the input's largest analytic gradient.
  double scale_floor = 0.0;
};

namespace detail {

inline std::vector<Index> pick_entries(Index size, Index count, std::mt19937_64& rng) {
  std::vector<Index> idx;
  if (count <= 0 || count >= size) {
    idx.resize(static_cast<std::size_t>(size));
    for (Index i = 0; i < size; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
  }
  std::uniform_int_distribution<Index> pick(0, size - 1);
  for (Index i = 0; i < count; ++i) idx.push_back(pick(rng));
  return idx;
}

template <typename Scalar>
std::vector<Var<Scalar>> as_vars(const std::vector<Tensor<double>>& point, bool requires_grad) {
  std::vector<Var<Scalar>> vars;
  vars.reserve(point.size());
  for (const auto& t : point) vars.emplace_back(t.template cast<Scalar>(), requires_grad);
  return vars;
}

}  // namespace detail

/// Compares the reverse-mode gradient of `analytic` (evaluated in its own
/// scalar type) against central differences of `numeric` (evaluated in
/// 64-bit) at `point`. Both callables map a vector of Vars to a scalar Var
/// and must compute the same function.
///
/// Returns max over checked entries of
/// |a - n| / max(|a|, |n|, scale_floor * max_i |a_i|, 1e-8).
template <typename Scalar, typename AnalyticFn, typename NumericFn>
double finite_diff_check(AnalyticFn&& analytic, NumericFn&& numeric,
                         const std::vector<Tensor<double>>& point, const GradCheckOptions& opts) {
  auto vars = detail::as_vars<Scalar>(point, true);
  Var<Scalar> loss = analytic(vars);
  backward(loss);

  std::mt19937_64 rng(opts.seed);
  double worst = 0.0;
  std::vector<Tensor<double>> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double floor =
        vars[i].has_grad()
            ? opts.scale_floor * static_cast<double>(vars[i].grad().data().cwiseAbs().maxCoeff())
            : 0.0;
    for (Index e : detail::pick_entries(point[i].size(), opts.entries_per_input, rng)) {
      const double a = vars[i].has_grad() ? static_cast<double>(vars[i].grad()[e]) : 0.0;
      const double x0 = point[i][e];
      probe[i][e] = x0 + opts.step;
      const double up = numeric(detail::as_vars<double>(probe, false)).value().item();
      probe[i][e] = x0 - opts.step;
      const double down = numeric(detail::as_vars<double>(probe, false)).value().item();
      probe[i][e] = x0;
      const double n = (up - down) / (2.0 * opts.step);
      worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor, 1e-8}));
    }
  }
  return worst;
}

/// 64-bit check of a single function.
template <typename Fn>
double finite_diff_check(Fn&& f, const std::vector<Tensor<double>>& point,
                         const GradCheckOptions& opts = {}) {
  return finite_diff_check<double>(f, f, point, opts);
}

}  // namespace raindiff
