// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/rng.hpp"
#include "raindiff/sampler.hpp"

#include <doctest.h>

#include <set>

using namespace raindiff;

namespace {

PatchEstimator constant_estimator(float c) {
  return [c](const TensorF& x_t, const TensorF&, int) { return TensorF::constant(x_t.shape(), c); };
}

TensorF image(Rng& rng, Index h, Index w) {
  TensorF t({1, 3, h, w});
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(2.0 * rng.uniform() - 1.0);
  return t;
}

// A non-trivial but cheap estimator: a fixed local mix of x_t and cond.
TensorF mix(const TensorF& x_t, const TensorF& cond, int t) {
  TensorF out(x_t.shape());
  out.data() = 0.3f * x_t.data() - 0.7f * cond.data().array().square().matrix();
  out.data().array() += 0.001f * static_cast<float>(t);
  return out;
}

std::set<Index> axis(const PatchGrid& g, bool rows) {
  std::set<Index> s;
  for (const auto& [top, left] : g.locations) s.insert(rows ? top : left);
  return s;
}

}  // namespace

TEST_CASE("grid examples") {
  const PatchGrid one = build_patch_grid(128, 128, 128, 64);
  CHECK(one.size() == 1);
  const PatchGrid four = build_patch_grid(192, 192, 128, 64);
  CHECK(four.size() == 4);
  CHECK(axis(four, true) == std::set<Index>{0, 64});
  const PatchGrid nine = build_patch_grid(200, 200, 128, 64);
  CHECK(nine.size() == 9);
  CHECK(axis(nine, true) == std::set<Index>{0, 64, 72});
  CHECK(axis(nine, false) == std::set<Index>{0, 64, 72});
  const PatchGrid wide = build_patch_grid(200, 136, 128, 32);
  CHECK(axis(wide, true) == std::set<Index>{0, 32, 64, 72});
  CHECK(axis(wide, false) == std::set<Index>{0, 8});
}

TEST_CASE("grid rejects strides outside 1..p and shrinks for small images") {
  CHECK_THROWS_AS(build_patch_grid(64, 64, 32, 33), std::invalid_argument);
  CHECK_THROWS_AS(build_patch_grid(64, 64, 32, 0), std::invalid_argument);
  const PatchGrid small = build_patch_grid(20, 40, 128, 64);
  CHECK(small.p == 20);
  CHECK(small.stride == 20);
  CHECK(axis(small, true) == std::set<Index>{0});
  CHECK(axis(small, false) == std::set<Index>{0, 20});
}

TEST_CASE("grid locations are in canonical row-major order and inside the image") {
  const PatchGrid g = build_patch_grid(200, 136, 64, 16);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto [top, left] = g.locations[i];
    CHECK((top >= 0 && left >= 0 && top + g.p <= 200 && left + g.p <= 136));
    if (i > 0) CHECK(g.locations[i - 1] < g.locations[i]);
  }
}

TEST_CASE("coverage counts every patch and leaves no hole") {
  for (const auto& [h, w] : {std::pair<Index, Index>{128, 128}, {192, 192}, {200, 136}}) {
    for (Index stride : {128, 64, 32}) {
      const PatchGrid g = build_patch_grid(h, w, 128, stride);
      const TensorF m = coverage(g);
      CHECK(m.data().minCoeff() >= 1.0f);
      CHECK(static_cast<double>(m.data().sum()) == static_cast<double>(g.size() * g.p * g.p));
    }
  }
}

TEST_CASE("a constant estimator fuses to exactly that constant") {
  Rng rng(1);
  for (const auto& [h, w] : {std::pair<Index, Index>{128, 128}, {192, 192}, {200, 136}}) {
    for (Index stride : {64, 32, 16}) {
      const PatchGrid g = build_patch_grid(h, w, 64, stride);
      const TensorF x = image(rng, h, w);
      for (float c : {0.3721f, -1.7f, 1e-7f}) {
        const TensorF fused = fuse_noise_estimate(g, constant_estimator(c), x, x, 5);
        CHECK((fused.data().array() == c).all());
      }
    }
  }
}

TEST_CASE("a single covering patch returns the estimator output unchanged") {
  Rng rng(2);
  const TensorF x = image(rng, 32, 32), c = image(rng, 32, 32);
  const PatchGrid g = build_patch_grid(32, 32, 32, 16);
  REQUIRE(g.size() == 1);
  CHECK(fuse_noise_estimate(g, mix, x, c, 3).data() == mix(x, c, 3).data());
}

TEST_CASE("overlapping patches are averaged") {
  TensorF x({1, 3, 2, 3});
  for (Index c = 0; c < 3; ++c) {
    for (Index j = 0; j < 3; ++j) {
      x[c * 6 + j] = static_cast<float>(j);
      x[c * 6 + 3 + j] = static_cast<float>(j);
    }
  }
  // each patch predicts 1 + its leftmost column index
  const PatchEstimator est = [](const TensorF& x_t, const TensorF&, int) {
    TensorF out(x_t.shape());
    const Index per = x_t.size() / x_t.dim(0);
    for (Index b = 0; b < x_t.dim(0); ++b) {
      for (Index i = 0; i < per; ++i) out[b * per + i] = 1.0f + x_t[b * per];
    }
    return out;
  };
  const PatchGrid g = build_patch_grid(2, 3, 2, 1);
  REQUIRE(g.size() == 2);
  const TensorF fused = fuse_noise_estimate(g, est, x, x, 1);
  for (Index c = 0; c < 3; ++c) {
    for (Index i = 0; i < 2; ++i) {
      CHECK(fused[c * 6 + i * 3 + 0] == 1.0f);
      CHECK(fused[c * 6 + i * 3 + 1] == 1.5f);
      CHECK(fused[c * 6 + i * 3 + 2] == 2.0f);
    }
  }
}

TEST_CASE("fusion is independent of chunking and thread count") {
  Rng rng(3);
  const TensorF x = image(rng, 72, 56), c = image(rng, 72, 56);
  const PatchGrid g = build_patch_grid(72, 56, 32, 8);
  const TensorF ref = fuse_noise_estimate(g, mix, x, c, 7, {.patches_per_batch = 1, .threads = 1});
  for (Index chunk : {3, 8, 1000}) {
    for (int threads : {1, 2, 4}) {
      CHECK(fuse_noise_estimate(g, mix, x, c, 7, {.patches_per_batch = chunk, .threads = threads}).data() ==
            ref.data());
    }
  }
}

TEST_CASE("fusion is linear in the estimator") {
  Rng rng(4);
  const TensorF x = image(rng, 48, 40), c = image(rng, 48, 40);
  const PatchGrid g = build_patch_grid(48, 40, 16, 4);
  const PatchEstimator shifted = [](const TensorF& a, const TensorF& b, int t) {
    TensorF out = mix(a, b, t);
    out.data().array() = 2.0f * out.data().array() - 0.5f * a.data().array();
    return out;
  };
  const TensorF lhs = fuse_noise_estimate(g, shifted, x, c, 2);
  const TensorF fm = fuse_noise_estimate(g, mix, x, c, 2);
  const TensorF rhs(x.shape(), 2.0f * fm.data() - 0.5f * x.data());
  CHECK((lhs.data() - rhs.data()).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("fusion rejects mismatched shapes") {
  Rng rng(5);
  const TensorF x = image(rng, 32, 32);
  CHECK_THROWS_AS(fuse_noise_estimate(build_patch_grid(40, 32, 16, 8), mix, x, x, 1), ShapeError);
  const PatchEstimator bad = [](const TensorF&, const TensorF&, int) { return TensorF({1, 3, 2, 2}); };
  CHECK_THROWS_AS(fuse_noise_estimate(build_patch_grid(32, 32, 16, 8), bad, x, x, 1), ShapeError);
}

TEST_CASE("a zero estimator telescopes to x_T over the largest sqrt(alpha_bar)") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear(200);
  Rng rng(6);
  const TensorF cond = image(rng, 24, 40);
  RestoreOptions o{.p = 16, .stride = 8, .seed = 77, .clamp = false};
  for (int S : {10, 200}) {
    const TimestepPlan plan = make_plan(200, S);
    const TensorF out = restore(constant_estimator(0.0f), cond, plan, s, o);
    const TensorF x_T = Rng(77).normal_tensor<float>(cond.shape());
    const double k = 1.0 / std::sqrt(s.alpha_bar(plan.tau.back()));
    for (Index i = 0; i < out.size(); ++i) {
      REQUIRE(out[i] == doctest::Approx(k * x_T[i]).epsilon(1e-4));
    }
  }
}

TEST_CASE("restore clamps to the image range when asked") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear(200);
  Rng rng(7);
  const TensorF cond = image(rng, 16, 16);
  const TensorF out = restore(constant_estimator(0.0f), cond, make_plan(200, 10), s, {.p = 16, .stride = 8});
  CHECK(out.data().cwiseAbs().maxCoeff() <= 1.0f);
  CHECK_THROWS_AS(restore(constant_estimator(0.0f), cond, make_plan(100, 10), s, {.p = 16, .stride = 8}),
                  std::invalid_argument);
}

TEST_CASE("clean-prediction clamping bounds every step and keeps an in-range oracle exact") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear(200);
  Rng rng(8);
  const TensorF cond = image(rng, 16, 24);
  RestoreOptions o{.p = 16, .stride = 8, .seed = 5, .clamp = false, .clamp_x0 = true};
  const TensorF out = restore(constant_estimator(0.0f), cond, make_plan(200, 10), s, o);
  CHECK(out.data().cwiseAbs().maxCoeff() <= 1.0f + 1e-6f);

  // the estimator that is exact for x0 = cond
  const PatchEstimator oracle = [&s](const TensorF& x_t, const TensorF& c, int t) {
    const double ab = s.alpha_bar(t);
    TensorF e(x_t.shape());
    e.data() = ((x_t.data().cast<double>() - std::sqrt(ab) * c.data().cast<double>()) / std::sqrt(1.0 - ab))
                   .cast<float>();
    return e;
  };
  for (bool clamp_x0 : {false, true}) {
    o.clamp_x0 = clamp_x0;
    const TensorF r = restore(oracle, cond, make_plan(200, 10), s, o);
    CHECK((r.data() - cond.data()).cwiseAbs().maxCoeff() < 1e-3f);
  }
}

TEST_CASE("derain uses theta_a only and is deterministic") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear(40);
  const ModelBundle m = ModelBundle::initialize({8, 16, 16}, 8);
  Rng rng(9);
  const TensorF rainy = image(rng, 48, 80);
  const auto reads = [&] {
    return std::array<std::size_t, 4>{m.theta_a.reads(), m.theta_b.reads(), m.phi_a.reads(), m.phi_b.reads()};
  };
  const auto before = reads();
  const RestoreOptions o{.p = 32, .stride = 16, .seed = 3};
  const TensorF a = derain(m, s, rainy, 4, o);
  const auto after = reads();
  CHECK(after[0] > before[0]);
  CHECK(after[1] == before[1]);
  CHECK(after[2] == before[2]);
  CHECK(after[3] == before[3]);
  CHECK(a.shape() == rainy.shape());
  CHECK(a.all_finite());
  CHECK(derain(m, s, rainy, 4, o).data() == a.data());
  CHECK(derain(m, s, rainy, 4, {.p = 32, .stride = 16, .seed = 4}).data() != a.data());

  const auto before_rain = reads();
  const TensorF r = gen_rain(m, s, rainy, 4, o);
  CHECK(reads()[1] > before_rain[1]);
  CHECK(reads()[0] == before_rain[0]);
  CHECK(r.data() != a.data());
}

TEST_CASE("derain handles every sampling granularity and small images") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear(40);
  const ModelBundle m = ModelBundle::initialize({8, 16, 16}, 10);
  Rng rng(11);
  const TensorF rainy = image(rng, 32, 32);
  for (int S : {40, 4, 1}) CHECK(derain(m, s, rainy, S, {.p = 128, .stride = 64}).all_finite());
  CHECK_THROWS_AS(derain(m, s, rainy, 7, {.p = 128, .stride = 64}), std::invalid_argument);
  CHECK(derain(m, s, image(rng, 18, 30), 4, {.p = 128, .stride = 64}).shape() == Shape{1, 3, 18, 30});
  CHECK_THROWS_AS(derain(m, s, image(rng, 3, 30), 4, {.p = 128, .stride = 64}), ShapeError);
}
