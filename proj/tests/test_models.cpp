// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/models.hpp"
#include "raindiff/rng.hpp"
#include "raindiff/selfcheck.hpp"

#include <doctest.h>

using namespace raindiff;

namespace {

const NoiseSchedule kSchedule = NoiseSchedule::scaled_linear(200);

VarF image(Rng& rng, Shape shape) {
  TensorF t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(2.0 * rng.uniform() - 1.0);
  return VarF::constant(std::move(t));
}

// Moves every tensor off its initial value, zero-initialized ones included.
void randomize(ParamSet<float>& p, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& [name, v] : p.entries()) {
    auto& t = p.value(name);
    for (Index i = 0; i < t.size(); ++i) t[i] += static_cast<float>(0.1 * rng.normal());
  }
}

float linf(const VarF& a, const VarF& b) {
  return (a.value().data() - b.value().data()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("noise estimator shape and finiteness at init") {
  const auto m = ModelBundle::initialize({32, 64, 128}, 1);
  Rng rng(2);
  const std::vector<int> ts{1, 200};
  const auto x = image(rng, {2, 3, 16, 16});
  const auto out = predict_noise(m.theta_a, m.estimator, x, image(rng, {2, 3, 16, 16}), ts, kSchedule);
  CHECK(out.shape() == x.shape());
  CHECK(out.value().all_finite());
}

TEST_CASE("noise estimator input validation") {
  const auto m = ModelBundle::initialize({8, 16, 16}, 1);
  Rng rng(2);
  const std::vector<int> ts{5};
  const auto x = image(rng, {1, 3, 16, 16});
  CHECK_THROWS_AS(predict_noise(m.theta_a, m.estimator, x, image(rng, {1, 3, 16, 12}), ts, kSchedule),
                  ShapeError);
  CHECK_THROWS_AS(predict_noise(m.theta_a, m.estimator, image(rng, {1, 3, 18, 18}),
                                image(rng, {1, 3, 18, 18}), ts, kSchedule),
                  ShapeError);
  const std::vector<int> bad{0};
  CHECK_THROWS_AS(predict_noise(m.theta_a, m.estimator, x, x, bad, kSchedule), std::out_of_range);
  const std::vector<int> two{1, 2};
  CHECK_THROWS_AS(predict_noise(m.theta_a, m.estimator, x, x, two, kSchedule), ShapeError);
}

TEST_CASE("conditioning is wired through channel concatenation") {
  auto m = ModelBundle::initialize({32, 64, 128}, 3);
  CHECK(m.theta_a.value("in.stem.conv_weight").dim(1) == 6);
  CHECK(m.theta_b.value("in.stem.conv_weight").dim(1) == 6);
  CHECK(m.phi_a.value("in.stem.conv_weight").dim(1) == 3);

  Rng rng(4);
  const std::vector<int> ts{50};
  const auto x = image(rng, {1, 3, 16, 16});
  const auto a = predict_noise(m.theta_a, m.estimator, x, image(rng, {1, 3, 16, 16}), ts, kSchedule);
  const auto b = predict_noise(m.theta_a, m.estimator, x, image(rng, {1, 3, 16, 16}), ts, kSchedule);
  CHECK(linf(a, b) > 0.0f);
}

TEST_CASE("noise estimator is time sensitive") {
  auto m = ModelBundle::initialize({32, 64, 128}, 5);
  randomize(m.theta_a, 6);
  Rng rng(7);
  const auto x = image(rng, {1, 3, 16, 16});
  const auto c = image(rng, {1, 3, 16, 16});
  const std::vector<int> first{1}, last{200};
  const auto a = predict_noise(m.theta_a, m.estimator, x, c, first, kSchedule);
  const auto b = predict_noise(m.theta_a, m.estimator, x, c, last, kSchedule);
  CHECK(linf(a, b) > 0.0f);
}

TEST_CASE("initialization is seeded") {
  const auto a = ModelBundle::initialize({32, 64, 128}, 11);
  const auto b = ModelBundle::initialize({32, 64, 128}, 11);
  const auto c = ModelBundle::initialize({32, 64, 128}, 12);
  CHECK(a.identical(b));
  CHECK_FALSE(a.identical(c));
  CHECK(a.theta_a.element_count() == a.theta_b.element_count());
  CHECK(a.phi_a.element_count() == a.phi_b.element_count());
  for (const auto* set : a.sets()) {
    for (const auto& [name, v] : set->entries()) CHECK(v.value().all_finite());
  }
}

TEST_CASE("init follows He-normal weights, zero biases and zero residual outputs") {
  const auto m = ModelBundle::initialize({32, 64, 128}, 13);
  const auto& w = m.theta_a.entries().at("enc1.res0.conv1_weight").value();
  const double fan_in = static_cast<double>(w.dim(1) * w.dim(2) * w.dim(3));
  const double var = w.data().template cast<double>().squaredNorm() / static_cast<double>(w.size());
  CHECK(var == doctest::Approx(2.0 / fan_in).epsilon(0.05));
  for (const auto& [name, v] : m.theta_a.entries()) {
    if (name.ends_with("_bias")) CHECK(v.value().data().cwiseAbs().maxCoeff() == 0.0f);
    if (name.ends_with("conv2_weight")) CHECK(v.value().data().cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("residual blocks are the identity at init") {
  const auto m = ModelBundle::initialize({32, 64, 128}, 17);
  Rng rng(18);
  const std::vector<int> ts{30};
  const auto x = image(rng, {1, 3, 16, 16});
  const auto c = image(rng, {1, 3, 16, 16});
  const auto full = predict_noise(m.theta_a, m.estimator, x, c, ts, kSchedule);
  for (const std::string block : {"enc0.res0", "enc1.res1", "enc2.res0", "dec0.res0"}) {
    const auto cut = predict_noise(m.theta_a, m.estimator, x, c, ts, kSchedule, {.bypass = {block}});
    CHECK_MESSAGE(cut.value().identical(full.value()), block);
  }
  const auto g = generate(m.phi_b, m.generator, x);
  CHECK(generate(m.phi_b, m.generator, x, {.bypass = {"enc1.res0", "dec1.res0"}}).value().identical(g.value()));
}

TEST_CASE("parameter sets are disjoint") {
  auto m = ModelBundle::initialize({16, 32, 32}, 19);
  Rng rng(20);
  const std::vector<int> ts{10};
  const auto x = image(rng, {1, 3, 16, 16});
  const auto run = [&](const ModelBundle& b) {
    return std::array<TensorF, 3>{
        predict_noise(b.theta_b, b.estimator, x, x, ts, kSchedule).value(),
        generate(b.phi_a, b.generator, x).value(), generate(b.phi_b, b.generator, x).value()};
  };
  const auto before = run(m);
  randomize(m.theta_a, 21);
  const auto after = run(m);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].identical(after[i]));
  for (const auto* a : m.sets()) {
    for (const auto* b : m.sets()) {
      if (a == b) continue;
      for (const auto& [name, v] : a->entries()) {
        const auto it = b->entries().find(name);
        if (it != b->entries().end()) CHECK(v.node() != it->second.node());
      }
    }
  }
}

TEST_CASE("generator preserves shape and range") {
  auto m = ModelBundle::initialize({32, 64, 128}, 23);
  randomize(m.phi_a, 24);
  Rng rng(25);
  for (Index side : {32, 48}) {
    const auto x = image(rng, {2, 3, side, side});
    const auto y = generate(m.phi_a, m.generator, x);
    CHECK(y.shape() == x.shape());
    CHECK(y.value().data().maxCoeff() <= 1.0f);
    CHECK(y.value().data().minCoeff() >= -1.0f);
  }
  CHECK_THROWS_AS(generate(m.phi_a, m.generator, image(rng, {1, 6, 16, 16})), ShapeError);
}

TEST_CASE("timestep embedding layout") {
  const std::vector<int> ts{0, 7};
  const auto e = timestep_embedding<double>(ts, 8);
  REQUIRE(e.shape() == Shape{2, 8});
  for (Index j = 0; j < 4; ++j) {
    CHECK(e[j] == 0.0);
    CHECK(e[4 + j] == 1.0);
    const double f = std::pow(10000.0, -static_cast<double>(j) / 4.0);
    CHECK(e[8 + j] == doctest::Approx(std::sin(7.0 * f)));
    CHECK(e[12 + j] == doctest::Approx(std::cos(7.0 * f)));
  }
}

TEST_CASE("whole-model gradients match central differences in 32-bit") {
  for (const auto& r : model_gradient_checks(31)) {
    CHECK_MESSAGE(r.passed, r.name << " error " << r.value);
  }
}
