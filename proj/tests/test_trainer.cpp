// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/checkpoint.hpp"
#include "raindiff/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace raindiff;

namespace {

constexpr std::array<int, 3> kTiny{8, 16, 16};

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 2;
  c.resolution = 8;
  c.adam.lr = 1e-3;
  return c;
}

TensorF batch(Rng& rng, Index n, Index size) {
  TensorF t({n, 3, size, size});
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(2.0 * rng.uniform() - 1.0);
  return t;
}

BatchSource random_batches(Index n, Index size) {
  return [n, size](std::uint64_t, Rng& data) {
    TensorF x = batch(data, n, size);
    TensorF y = batch(data, n, size);
    return std::pair{std::move(x), std::move(y)};
  };
}

double grad_norm(const ParamSet<float>& set) {
  double s = 0.0;
  for (const auto& [name, v] : set.entries()) {
    if (v.has_grad()) s += v.grad().data().cast<double>().squaredNorm();
  }
  return std::sqrt(s);
}

struct Fixture {
  ModelBundle models = ModelBundle::initialize(kTiny, 11);
  TrainConfig config = tiny_config();
  TrainState state = TrainState::fresh(models, NoiseSchedule::scaled_linear(200), config, 12);
};

}  // namespace

TEST_CASE("patch mask positions are uniform") {
  Rng rng(1);
  constexpr Index kSide = 256, kP = 128, kPos = kSide - kP + 1;
  constexpr int kDraws = 100000;
  std::vector<int> cells(kPos * kPos, 0), rows(kPos, 0), cols(kPos, 0);
  for (int i = 0; i < kDraws; ++i) {
    const PatchMask m = sample_patch_mask(kSide, kSide, kP, rng);
    REQUIRE(m.p == kP);
    REQUIRE((m.top >= 0 && m.top < kPos && m.left >= 0 && m.left < kPos));
    ++cells[static_cast<std::size_t>(m.top * kPos + m.left)];
    ++rows[static_cast<std::size_t>(m.top)];
    ++cols[static_cast<std::size_t>(m.left)];
  }
  const auto chi2 = [](const std::vector<int>& counts, double expected) {
    double s = 0.0;
    for (int c : counts) s += (c - expected) * (c - expected) / expected;
    return s;
  };
  // chi-square with k - 1 dof: mean k - 1, sd sqrt(2 (k - 1)); accept within 5 sd
  const auto within = [](double stat, double dof) { return std::abs(stat - dof) < 5.0 * std::sqrt(2.0 * dof); };
  CHECK(within(chi2(cells, static_cast<double>(kDraws) / (kPos * kPos)), kPos * kPos - 1.0));
  CHECK(within(chi2(rows, static_cast<double>(kDraws) / kPos), kPos - 1.0));
  CHECK(within(chi2(cols, static_cast<double>(kDraws) / kPos), kPos - 1.0));
}

TEST_CASE("patch mask degenerate and boundary cases") {
  Rng rng(2);
  const PatchMask small = sample_patch_mask(32, 32, 128, rng);
  CHECK((small.top == 0 && small.left == 0 && small.p == 32));
  const PatchMask narrow = sample_patch_mask(100, 200, 128, rng);
  CHECK((narrow.top == 0 && narrow.left == 0 && narrow.p == 100));
  const PatchMask exact = sample_patch_mask(128, 128, 128, rng);
  CHECK((exact.top == 0 && exact.left == 0 && exact.p == 128));
  CHECK_THROWS_AS(sample_patch_mask(0, 10, 4, rng), std::invalid_argument);
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  ParamSet<float> set("s");
  set.add("w", TensorF::constant({4}, 1.0f));
  const std::array<float, 4> g{0.5f, -2.0f, 1e-3f, -7.0f};
  Adam adam({.lr = 0.1});
  std::array<const ParamSet<float>*, 1> cs{&set};
  adam.attach(cs);
  const VarF& w = set["w"];
  TensorF gt({4});
  for (Index i = 0; i < 4; ++i) gt[i] = g[static_cast<std::size_t>(i)];
  backward(sum(mul(w, VarF::constant(gt))));
  std::array<ParamSet<float>*, 1> ms{&set};
  adam.step(ms);
  CHECK(adam.steps() == 1);
  for (Index i = 0; i < 4; ++i) {
    const double gi = g[static_cast<std::size_t>(i)];
    const double expected = 1.0 - 0.1 * gi / (std::abs(gi) + 1e-8);
    CHECK(set["w"].value()[i] == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("adam minimizes a quadratic and skips parameters without gradient") {
  ParamSet<float> set("s");
  set.add("w", TensorF::constant({3}, 0.0f));
  set.add("unused", TensorF::constant({2}, 5.0f));
  Adam adam({.lr = 0.05, .beta1 = 0.9});
  std::array<const ParamSet<float>*, 1> cs{&set};
  adam.attach(cs);
  std::array<ParamSet<float>*, 1> ms{&set};
  const auto loss = [&] {
    const VarF d = affine(set["w"], 1.0f, -3.0f);
    return sum(mul(d, d));
  };
  const float start = loss().value().item();
  for (int i = 0; i < 100; ++i) {
    set.zero_grad();
    backward(loss());
    adam.step(ms);
  }
  CHECK(loss().value().item() < 0.05f * start);
  CHECK(set["unused"].value().data() == TensorF::constant({2}, 5.0f).data());
  CHECK(adam.first().at("s.unused").data().cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("adam clipping bounds the effective gradient norm") {
  ParamSet<float> set("s");
  set.add("w", TensorF::constant({2}, 0.0f));
  Adam adam({.lr = 0.1, .clip_norm = 1.0});
  std::array<const ParamSet<float>*, 1> cs{&set};
  adam.attach(cs);
  TensorF gt({2});
  gt[0] = 30.0f;
  gt[1] = 40.0f;
  backward(sum(mul(set["w"], VarF::constant(gt))));
  std::array<ParamSet<float>*, 1> ms{&set};
  adam.step(ms);
  CHECK(adam.last_grad_norm() == doctest::Approx(50.0));
  // first moment holds the clipped gradient (1 - beta1) * g * 1 / 50
  CHECK(adam.first().at("s.w")[0] == doctest::Approx(0.5 * 30.0 / 50.0).epsilon(1e-6));
}

TEST_CASE("training streams are seeded and independent") {
  const RngStreams a = RngStreams::from_seed(3), b = RngStreams::from_seed(3), c = RngStreams::from_seed(4);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  RngStreams d = a;
  CHECK(d.mask.uniform() != d.timestep.uniform());
}

TEST_CASE("every term's gradient reaches its parameter sets") {
  Fixture f;
  Rng rng(5);
  const TensorF x = batch(rng, 2, 8), y = batch(rng, 2, 8);
  const LossGraph g = build_losses(f.models, f.state, f.config, x, y);
  backward(g.total);
  for (const auto* set : f.models.sets()) CHECK(grad_norm(*set) > 0.0);
}

TEST_CASE("components add up to the optimized scalar") {
  Fixture f;
  Rng rng(6);
  for (double lambda : {1.0, 0.37, 0.0}) {
    f.state.lambda_cyc = lambda;
    for (int k = 0; k < 5; ++k) {
      const LossGraph g = build_losses(f.models, f.state, f.config, batch(rng, 2, 8), batch(rng, 2, 8));
      const auto c = g.breakdown.components();
      const double sum = c[0] + c[1] + c[2] + c[3] + lambda * c[4];
      CHECK(std::abs(sum - g.breakdown.total) <= 1e-6);
      CHECK(g.breakdown.cyc > 0.0);
    }
  }
}

TEST_CASE("zeroing the conditions changes every noise term") {
  Fixture f;
  Rng rng(7);
  const TensorF x = batch(rng, 2, 8), y = batch(rng, 2, 8);
  TrainState s1 = f.state, s2 = f.state;
  const LossGraph a = build_losses(f.models, s1, f.config, x, y);
  const LossGraph b = build_losses(f.models, s2, f.config, x, y, {.zero_conditions = true});
  for (std::size_t k = 0; k < 4; ++k) CHECK(a.breakdown.components()[k] != b.breakdown.components()[k]);
  CHECK(a.breakdown.cyc == b.breakdown.cyc);
}

TEST_CASE("stop-gradient switch isolates the generators") {
  Rng rng(8);
  const TensorF x = batch(rng, 2, 8), y = batch(rng, 2, 8);
  for (const bool stop : {false, true}) {
    for (const double lambda : {0.0, 1.0}) {
      Fixture f;
      f.config.stop_grad_conditions = stop;
      f.state.lambda_cyc = lambda;
      const LossGraph g = build_losses(f.models, f.state, f.config, x, y);
      backward(g.total);
      const bool phi_expected = !stop || lambda != 0.0;
      CAPTURE(stop);
      CAPTURE(lambda);
      CHECK((grad_norm(f.models.phi_a) > 0.0) == phi_expected);
      CHECK((grad_norm(f.models.phi_b) > 0.0) == phi_expected);
      CHECK(grad_norm(f.models.theta_a) > 0.0);
      CHECK(grad_norm(f.models.theta_b) > 0.0);
    }
  }
}

TEST_CASE("shared and independent noise draws consume the streams differently") {
  Fixture f;
  Rng rng(9);
  const TensorF x = batch(rng, 2, 8), y = batch(rng, 2, 8);
  TrainState shared = f.state, indep = f.state;
  TrainConfig ci = f.config;
  ci.independent_eps_per_term = true;
  build_losses(f.models, shared, f.config, x, y);
  build_losses(f.models, indep, ci, x, y);
  Rng expect = f.state.rng.timestep;
  for (int k = 0; k < 4; ++k) expect.uniform_int(1, 200);
  CHECK(shared.rng.timestep == expect);
  for (int k = 0; k < 4; ++k) expect.uniform_int(1, 200);
  CHECK(indep.rng.timestep == expect);
}

TEST_CASE("training is deterministic under fixed seeds") {
  Fixture a, b;
  const auto src = random_batches(2, 8);
  train(a.models, a.state, a.config, src, 2);
  train(b.models, b.state, b.config, src, 2);
  CHECK(a.state.step == 2);
  CHECK(a.models.identical(b.models));
  CHECK(a.state.rng == b.state.rng);
  Fixture fresh;
  CHECK_FALSE(a.models.identical(fresh.models));
}

TEST_CASE("resuming from a checkpoint matches the uninterrupted run bit for bit") {
  const auto src = random_batches(2, 8);
  Fixture straight;
  train(straight.models, straight.state, straight.config, src, 4);

  Fixture first;
  std::string bytes;
  TrainHooks hooks;
  hooks.checkpoint = [&](const ModelBundle& m, const TrainState& s) { bytes = encode_checkpoint(m, s); };
  first.config.checkpoint_every = 2;
  train(first.models, first.state, first.config, src, 2, hooks);
  Checkpoint resumed = decode_checkpoint(bytes);
  CHECK(resumed.state.step == 2);
  resumed.state.adam.set_config(first.config.adam);
  resumed.state.lambda_cyc = first.config.lambda_cyc;
  train(resumed.models, resumed.state, first.config, src, 4);
  CHECK(resumed.models.identical(straight.models));
  CHECK(resumed.state.rng == straight.state.rng);
  CHECK(encode_checkpoint(resumed.models, resumed.state) == encode_checkpoint(straight.models, straight.state));
}

TEST_CASE("zero steps still produces a checkpoint and a header-only log") {
  Fixture f;
  int saves = 0;
  std::ostringstream log;
  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint = [&](const ModelBundle&, const TrainState& s) {
    ++saves;
    CHECK(s.step == 0);
  };
  train(f.models, f.state, f.config, random_batches(2, 8), 0, hooks);
  CHECK(saves == 1);
  CHECK(log.str().empty());
  CHECK(training_log_header().find("err_A_clean") != std::string::npos);
}

TEST_CASE("training log has one line per step") {
  Fixture f;
  std::ostringstream log;
  train(f.models, f.state, f.config, random_batches(2, 8), 3, {.log = &log});
  std::istringstream in(log.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    std::istringstream fields(line);
    std::uint64_t step = 0;
    fields >> step;
    CHECK(step == static_cast<std::uint64_t>(lines));
    int columns = 1;
    for (std::string cell; std::getline(fields, cell, '\t');) columns += cell.empty() ? 0 : 1;
    CHECK(columns == 8);
  }
  CHECK(lines == 3);
}

TEST_CASE("a non-finite loss aborts before any update") {
  Fixture f;
  Rng rng(10);
  TensorF x = batch(rng, 2, 8), y = batch(rng, 2, 8);
  x[5] = std::numeric_limits<float>::quiet_NaN();
  const ModelBundle before = f.models.clone();
  CHECK_THROWS_AS(training_step(f.models, f.state, f.config, x, y), NonFiniteLoss);
  CHECK(f.models.identical(before));
  CHECK(f.state.step == 0);
}

TEST_CASE("patch side must suit the estimator") {
  Fixture f;
  Rng rng(11);
  f.config.patch = 6;
  CHECK_THROWS_AS(build_losses(f.models, f.state, f.config, batch(rng, 1, 8), batch(rng, 1, 8)),
                  std::invalid_argument);
}
