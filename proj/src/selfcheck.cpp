// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/selfcheck.hpp"

#include "raindiff/diffusion.hpp"
#include "raindiff/gradcheck.hpp"
#include "raindiff/models.hpp"
#include "raindiff/rng.hpp"
#include "raindiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

namespace raindiff {

namespace {

using Build = std::function<VarD(const std::vector<VarD>&)>;

struct PrimitiveCase {
  std::string name;
  std::vector<Shape> inputs;
  Build build;
};

std::vector<PrimitiveCase> primitive_cases() {
  const std::vector<Index> tops{1, 0}, lefts{0, 2};
  const std::vector<double> coeffs{0.7, -1.3};
  return {
      {"add", {{2, 3, 4}, {2, 3, 4}}, [](const auto& v) { return add(v[0], v[1]); }},
      {"sub", {{2, 3, 4}, {2, 3, 4}}, [](const auto& v) { return sub(v[0], v[1]); }},
      {"mul", {{2, 3, 4}, {2, 3, 4}}, [](const auto& v) { return mul(v[0], v[1]); }},
      {"affine", {{3, 5}}, [](const auto& v) { return affine(v[0], 1.7, -0.3); }},
      {"scale_per_sample", {{2, 3, 2, 2}},
       [coeffs](const auto& v) { return scale_per_sample<double>(v[0], coeffs); }},
      {"concat_channels", {{2, 2, 3, 3}, {2, 3, 3, 3}},
       [](const auto& v) { return concat_channels(v[0], v[1]); }},
      {"conv2d_s1", {{2, 3, 6, 6}, {4, 3, 3, 3}, {4}},
       [](const auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); }},
      {"conv2d_s2", {{2, 3, 6, 6}, {4, 3, 3, 3}, {4}},
       [](const auto& v) { return conv2d(v[0], v[1], v[2], 2, 1); }},
      {"upsample2x", {{2, 2, 3, 3}}, [](const auto& v) { return upsample2x(v[0]); }},
      {"matmul", {{3, 4}, {4, 5}}, [](const auto& v) { return matmul(v[0], v[1]); }},
      {"linear", {{3, 4}, {5, 4}, {5}}, [](const auto& v) { return linear(v[0], v[1], v[2]); }},
      {"add_channel_bias", {{2, 3, 2, 2}, {2, 3}},
       [](const auto& v) { return add_channel_bias(v[0], v[1]); }},
      {"group_norm", {{2, 8, 3, 3}, {8}, {8}},
       [](const auto& v) { return group_norm(v[0], v[1], v[2], 4); }},
      {"silu", {{2, 3, 4}}, [](const auto& v) { return silu(v[0]); }},
      {"tanh", {{2, 3, 4}}, [](const auto& v) { return tanh(v[0]); }},
      {"mean", {{2, 3, 4}}, [](const auto& v) { return mean(v[0]); }},
      {"sum", {{2, 3, 4}}, [](const auto& v) { return sum(v[0]); }},
      {"mse", {{2, 3, 4}, {2, 3, 4}}, [](const auto& v) { return mse(v[0], v[1]); }},
      {"mae", {{2, 3, 4}, {2, 3, 4}}, [](const auto& v) { return mae(v[0], v[1]); }},
      {"weighted_sum", {{}, {}, {}},
       [](const auto& v) {
         const std::vector<double> w{1.0, 0.5, 2.0};
         return weighted_sum<double>(v, w);
       }},
      {"crop", {{2, 2, 4, 5}},
       [tops, lefts](const auto& v) { return crop<double>(v[0], tops, lefts, 3, 3); }},
  };
}

CheckResult make_result(std::string name, double value, double tolerance, std::string detail = {}) {
  CheckResult r;
  r.name = std::move(name);
  r.value = value;
  r.tolerance = tolerance;
  r.passed = std::isfinite(value) && value <= tolerance;
  r.detail = std::move(detail);
  return r;
}

}  // namespace

std::vector<CheckResult> primitive_gradient_checks(std::uint64_t seed, int points, double tolerance) {
  std::vector<CheckResult> results;
  Rng rng(seed);
  for (const auto& c : primitive_cases()) {
    double worst = 0.0;
    for (int p = 0; p < points; ++p) {
      std::vector<TensorD> point;
      for (const auto& s : c.inputs) point.push_back(rng.normal_tensor<double>(s));
      // reduce non-scalar outputs through a fixed random projection
      VarD probe = c.build(detail::as_vars<double>(point, false));
      const VarD weights = VarD::constant(rng.normal_tensor<double>(probe.shape()));
      const auto loss = [&](const std::vector<VarD>& v) { return sum(mul(c.build(v), weights)); };
      worst = std::max(worst, finite_diff_check(loss, point, {.step = 1e-5}));
    }
    results.push_back(make_result("grad/" + c.name, worst, tolerance));
  }
  return results;
}

std::vector<CheckResult> model_gradient_checks(std::uint64_t seed, int entries_per_tensor,
                                               double tolerance) {
  std::vector<CheckResult> results;
  const NoiseSchedule schedule = NoiseSchedule::scaled_linear(200);
  const std::vector<int> timesteps{17};

  for (const bool estimator : {true, false}) {
    const UNetConfig cfg = estimator ? estimator_config() : generator_config();
    // perturb every tensor so that zero-initialized branches are exercised too
    const ParamSet<double> params = init_unet<double>(cfg, mix_seed(seed, estimator ? 11 : 12), "m");
    Rng rng(mix_seed(seed, estimator ? 13 : 14));
    std::vector<std::string> names;
    std::vector<TensorD> point;
    for (const auto& [name, v] : params.entries()) {
      TensorD t = v.value();
      const double scale = t.data().cwiseAbs().maxCoeff() > 0 ? 0.3 : 0.05;
      for (Index i = 0; i < t.size(); ++i) t[i] += scale * rng.normal();
      names.push_back(name);
      point.push_back(std::move(t));
    }
    TensorD x({1, 3, 16, 16}), cond({1, 3, 16, 16});
    for (Index i = 0; i < x.size(); ++i) x[i] = 2.0 * rng.uniform() - 1.0;
    for (Index i = 0; i < cond.size(); ++i) cond[i] = 2.0 * rng.uniform() - 1.0;

    // mean-square output as a function of every parameter tensor
    const auto objective = [&](const auto& vars) {
      using S = typename std::decay_t<decltype(vars)>::value_type::scalar_type;
      ParamSet<S> p("m");
      for (std::size_t i = 0; i < names.size(); ++i) p.adopt(names[i], vars[i]);
      const auto xv = Var<S>::constant(x.cast<S>());
      Var<S> out = estimator ? predict_noise(p, cfg, xv, Var<S>::constant(cond.cast<S>()), timesteps,
                                             schedule)
                             : generate(p, cfg, xv);
      return mean(mul(out, out));
    };
    const double err = finite_diff_check<float>(
        objective, objective, point,
        {.step = 1e-4,
         .entries_per_input = entries_per_tensor,
         .seed = mix_seed(seed, 15),
         .scale_floor = 1e-2});
    results.push_back(make_result(estimator ? "grad/model/estimator" : "grad/model/generator", err,
                                  tolerance));
  }
  return results;
}

std::vector<CheckResult> run_self_checks(std::uint64_t seed, const NoiseSchedule& schedule) {
  std::vector<CheckResult> results;
  const int T = schedule.steps();

  double product = 1.0, drift = 0.0;
  bool monotone = true;
  for (int t = 1; t <= T; ++t) {
    product *= 1.0 - schedule.betas()[static_cast<std::size_t>(t - 1)];
    drift = std::max(drift, std::abs(product - schedule.alpha_bar(t)));
    if (t > 1 && !(schedule.alpha_bar(t) < schedule.alpha_bar(t - 1))) monotone = false;
  }
  results.push_back(make_result("schedule/monotone", monotone ? drift : std::numeric_limits<double>::infinity(),
                                1e-12, monotone ? "" : "alpha_bar is not strictly decreasing"));

  Rng rng(mix_seed(seed, 21));
  double err64 = 0.0, err32 = 0.0;
  int trials32 = 0;
  for (int k = 0; k < 200; ++k) {
    const int t = static_cast<int>(rng.uniform_int(1, T));
    const TensorD x0 = TensorD::constant({1}, 2.0 * rng.uniform() - 1.0), eps = TensorD::constant({1}, rng.normal());
    err64 = std::max(err64, std::abs(implicit_step(forward_sample(x0, t, eps, schedule), t, 0, eps, schedule)[0] - x0[0]));
    if (std::sqrt(schedule.alpha_bar(t)) < 0.05) continue;
    const TensorF x0f = x0.cast<float>(), epsf = eps.cast<float>();
    const TensorF back = implicit_step(forward_sample(x0f, t, epsf, schedule), t, 0, epsf, schedule);
    err32 = std::max(err32, static_cast<double>(std::abs(back[0] - x0f[0])));
    ++trials32;
  }
  results.push_back(make_result("diffusion/round_trip_f64", err64, 1e-9));
  results.push_back(make_result("diffusion/round_trip_f32", err32, 1e-5,
                                std::to_string(trials32) + " triples with sqrt(alpha_bar) >= 0.05"));

  const float c = 0.3721f;
  const PatchEstimator constant = [c](const TensorF& x_t, const TensorF&, int) {
    TensorF out(x_t.shape());
    out.data().setConstant(c);
    return out;
  };
  double fuse_err = 0.0;
  for (const auto& [h, w] : {std::pair<Index, Index>{128, 128}, {192, 192}, {200, 136}}) {
    for (const Index stride : {32, 16, 8}) {
      const PatchGrid grid = build_patch_grid(h, w, 32, stride);
      const TensorF x({1, 3, h, w});
      const TensorF fused = fuse_noise_estimate(grid, constant, x, x, 1);
      fuse_err = std::max(fuse_err, static_cast<double>((fused.data().array() - c).abs().maxCoeff()));
      if (coverage(grid).data().minCoeff() < 1.0f) fuse_err = std::numeric_limits<double>::infinity();
    }
  }
  results.push_back(make_result("sampler/constant_fusion", fuse_err, 0.0));

  for (auto& r : primitive_gradient_checks(mix_seed(seed, 22), 2)) results.push_back(std::move(r));
  for (auto& r : model_gradient_checks(mix_seed(seed, 23), 2)) results.push_back(std::move(r));
  return results;
}

}  // namespace raindiff
