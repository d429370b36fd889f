// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "raindiff/gradcheck.hpp"
#include "raindiff/ops.hpp"
#include "raindiff/rng.hpp"
#include "raindiff/selfcheck.hpp"

#include <cmath>

using namespace raindiff;

namespace {

TensorD filled(Shape shape, double v) { return TensorD::constant(std::move(shape), v); }

}  // namespace

TEST_CASE("conv2d with an identity 1x1 kernel returns the input") {
  Rng rng(1);
  const auto x = Var<double>::constant(rng.normal_tensor<double>({2, 3, 5, 4}));
  TensorD w({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  const auto y = conv2d(x, Var<double>::constant(w), Var<double>::constant(TensorD({3})), 1, 0);
  CHECK(y.value().identical(x.value()));
}

TEST_CASE("conv2d of ones with a 3x3 ones kernel sums the window") {
  const auto x = Var<float>::constant(TensorF::constant({1, 1, 3, 3}, 1.0f));
  const auto w = Var<float>::constant(TensorF::constant({1, 1, 3, 3}, 1.0f));
  const auto y = conv2d(x, w, Var<float>::constant(TensorF({1})), 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.value().at(0, 0, 1, 1) == 9.0f);
  CHECK(y.value().at(0, 0, 0, 0) == 4.0f);
  CHECK(y.value().at(0, 0, 0, 1) == 6.0f);
}

TEST_CASE("conv2d stride 2 halves the spatial size") {
  const auto x = Var<float>::constant(TensorF({1, 2, 8, 6}));
  const auto y = conv2d(x, Var<float>::constant(TensorF({4, 2, 3, 3})),
                        Var<float>::constant(TensorF({4})), 2, 1);
  CHECK(y.shape() == Shape{1, 4, 4, 3});
}

TEST_CASE("silu at zero is zero") {
  const auto y = silu(Var<double>::constant(TensorD::scalar(0.0)));
  CHECK(y.value().item() == 0.0);
}

TEST_CASE("shape mismatches are rejected naming both shapes") {
  const auto a = Var<float>::constant(TensorF({2, 3}));
  const auto b = Var<float>::constant(TensorF({3, 2}));
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(3, 2)") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(Var<float>::constant(TensorF({1, 2, 4, 4})),
                         Var<float>::constant(TensorF({1, 3, 3, 3})),
                         Var<float>::constant(TensorF({1}))),
                  ShapeError);
  CHECK_THROWS_AS(group_norm(Var<float>::constant(TensorF({1, 6, 2, 2})),
                             Var<float>::constant(TensorF({6})), Var<float>::constant(TensorF({6})), 4),
                  ShapeError);
}

TEST_CASE("backward through mean((w x)^2) gives the hand chain rule") {
  auto w = Var<double>::parameter(TensorD::scalar(2.0));
  auto x = Var<double>::constant(TensorD::scalar(1.0));
  const auto wx = mul(w, x);
  backward(mean(mul(wx, wx)));
  REQUIRE(w.has_grad());
  CHECK(w.grad().item() == doctest::Approx(4.0).epsilon(1e-15));
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("gradient of a loss independent of w") {
  auto w = Var<double>::parameter(TensorD::scalar(2.0));
  auto x = Var<double>::parameter(filled({2}, 3.0));

  SUBCASE("w unreachable from the loss receives no gradient") {
    backward(sum(x));
    CHECK_FALSE(w.has_grad());
  }
  SUBCASE("w cancels out") {
    backward(sub(mul(w, w), mul(w, w)));
    REQUIRE(w.has_grad());
    CHECK(w.grad().item() == 0.0);
  }
}

TEST_CASE("gradient of sum over a 2x2 tensor is all ones") {
  auto x = Var<float>::parameter(TensorF({2, 2}));
  backward(sum(x));
  CHECK(x.grad().identical(TensorF::constant({2, 2}, 1.0f)));
}

TEST_CASE("backward rejects a non-scalar loss") {
  auto x = Var<float>::parameter(TensorF({2, 2}));
  CHECK_THROWS_AS(backward(silu(x)), ShapeError);
}

TEST_CASE("finite_diff_check on reference functions") {
  SUBCASE("linear y = 3x") {
    const double err = finite_diff_check(
        [](const std::vector<Var<double>>& v) { return affine(v[0], 3.0); },
        {TensorD::scalar(0.37)}, {.step = 1e-5});
    CHECK(err < 1e-9);
  }
  SUBCASE("conv2d, random 8x8 input and 3x3 kernel") {
    Rng rng(7);
    const TensorD proj = rng.normal_tensor<double>({1, 1, 8, 8});
    const double err = finite_diff_check(
        [&](const std::vector<Var<double>>& v) {
          return sum(mul(conv2d(v[0], v[1], v[2]), Var<double>::constant(proj)));
        },
        {rng.normal_tensor<double>({1, 1, 8, 8}), rng.normal_tensor<double>({1, 1, 3, 3}),
         rng.normal_tensor<double>({1})},
        {.step = 1e-5});
    CHECK(err < 1e-5);
  }
  SUBCASE("constant op") {
    const double err = finite_diff_check(
        [](const std::vector<Var<double>>& v) {
          return add(mul(v[0], Var<double>::constant(TensorD::scalar(0.0))),
                     Var<double>::constant(TensorD::scalar(5.0)));
        },
        {TensorD::scalar(1.5)});
    CHECK(err == 0.0);
  }
}

TEST_CASE("every primitive passes a 64-bit central-difference check at 10 points") {
  for (const auto& r : primitive_gradient_checks(2026, 10, 1e-5)) {
    INFO(r.name << " max relative error " << r.value);
    CHECK(r.passed);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(3);
  const TensorD xv = rng.normal_tensor<double>({1, 2, 4, 4});
  const TensorD wv = rng.normal_tensor<double>({2, 2, 3, 3});
  const TensorD bv = rng.normal_tensor<double>({2});
  const double a = 0.7, b = -1.9;

  auto grads = [&](auto&& make_loss) {
    auto w = Var<double>::parameter(wv);
    const auto y = conv2d(Var<double>::constant(xv), w, Var<double>::constant(bv));
    backward(make_loss(y));
    return w.grad();
  };
  const auto l1 = [](const Var<double>& y) { return mean(mul(y, y)); };
  const auto l2 = [](const Var<double>& y) { return sum(tanh(y)); };
  const TensorD g1 = grads(l1);
  const TensorD g2 = grads(l2);
  const TensorD gc =
      grads([&](const Var<double>& y) { return add(affine(l1(y), a), affine(l2(y), b)); });
  CHECK((gc.data() - (a * g1.data() + b * g2.data())).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("identical inputs give bit-identical outputs and gradients") {
  auto run = [] {
    Rng rng(99);
    auto x = Var<float>::parameter(rng.normal_tensor<float>({2, 8, 6, 6}));
    auto w = Var<float>::parameter(rng.normal_tensor<float>({8, 8, 3, 3}));
    auto g = Var<float>::parameter(TensorF::constant({8}, 1.0f));
    auto b = Var<float>::parameter(TensorF({8}));
    const auto y = silu(group_norm(conv2d(x, w, b, 2, 1), g, b, 8));
    backward(mean(mul(y, y)));
    return std::make_pair(y.value(), w.grad());
  };
  const auto [y1, g1] = run();
  const auto [y2, g2] = run();
  CHECK(y1.identical(y2));
  CHECK(g1.identical(g2));
}

TEST_CASE("ops on finite inputs stay finite") {
  const auto x = Var<float>::constant(TensorF::constant({1, 8, 2, 2}, 1e3f));
  const auto y = group_norm(x, Var<float>::constant(TensorF::constant({8}, 1.0f)),
                            Var<float>::constant(TensorF({8})), 8);
  CHECK(y.value().all_finite());
  CHECK(silu(Var<float>::constant(TensorF::constant({3}, -1e4f))).value().all_finite());
}
