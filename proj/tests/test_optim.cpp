/*
 * Copyright 2026 The dakd Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <cmath>

#include "dakd/optim.hpp"

using namespace dakd;

namespace {

nn::ParameterSet one_param(float w) {
  nn::ParameterSet p;
  p.add("w", {1}, {w});
  return p;
}

}  // namespace

TEST_SUITE("optim") {
  TEST_CASE("poly_lr reproduces the reference base rate and the midpoint decay") {
    auto spec = OptimSpec::generator_default();
    spec.max_iters = 5000;
    CHECK(spec.base_lr == 2.5e-4);
    CHECK(spec.momentum == 0.9);
    CHECK(spec.weight_decay == 1e-4);
    CHECK(spec.poly_power == 0.9);
    CHECK(poly_lr(spec, 0) == 2.5e-4);
    CHECK(std::abs(poly_lr(spec, 2500) - 1.3397e-4) < 1e-8);
    CHECK(std::abs(poly_lr(spec, 2500) - 2.5e-4 * std::pow(0.5, 0.9)) < 1e-18);
    CHECK(poly_lr(spec, 5000) == 0.0);
  }

  TEST_CASE("poly_lr is non-increasing, non-negative and range checked") {
    auto spec = OptimSpec::generator_default();
    spec.max_iters = 777;
    double prev = poly_lr(spec, 0);
    for (int i = 1; i <= spec.max_iters; ++i) {
      const double lr = poly_lr(spec, i);
      CHECK(lr <= prev);
      CHECK(lr >= 0.0);
      prev = lr;
    }
    CHECK_THROWS_AS(poly_lr(spec, -1), std::out_of_range);
    CHECK_THROWS_AS(poly_lr(spec, 778), std::out_of_range);
  }

  TEST_CASE("discriminator default is Adam at 1e-4 without weight decay") {
    const auto d = OptimSpec::discriminator_default();
    CHECK(d.kind == OptimKind::kAdam);
    CHECK(d.base_lr == 1e-4);
    CHECK(d.weight_decay == 0.0);
  }

  TEST_CASE("Nesterov SGD follows the reference recurrence on a quadratic") {
    // f(w) = 0.5 * a * w^2, so g = a * w. Reference in double precision.
    const double a = 3.0, lr = 0.05, mu = 0.9, wd = 1e-4;
    OptimSpec spec = OptimSpec::generator_default();
    auto params = one_param(1.5f);
    Optimizer opt(spec, params);
    double w = 1.5, v = 0.0;
    for (int step = 0; step < 50; ++step) {
      nn::Gradients g(params);
      g[0][0] = static_cast<float>(a * params[0].value[0]);
      opt.step(params, g, lr);
      const double d = a * w + wd * w;
      v = mu * v + d;
      w -= lr * (d + mu * v);
      CHECK(std::abs(params[0].value[0] - w) < 1e-5 * (1.0 + std::abs(w)));
    }
    CHECK(std::abs(w) < 0.1);
  }

  TEST_CASE("Adam follows the bias-corrected reference recurrence") {
    OptimSpec spec = OptimSpec::discriminator_default();
    auto params = one_param(-0.7f);
    Optimizer opt(spec, params);
    const double b1 = spec.momentum, b2 = spec.beta2, eps = spec.adam_epsilon, lr = 1e-2;
    double w = -0.7, m = 0.0, v = 0.0;
    for (int t = 1; t <= 40; ++t) {
      nn::Gradients g(params);
      const double grad = 2.0 * (params[0].value[0] - 0.25);
      g[0][0] = static_cast<float>(grad);
      opt.step(params, g, lr);
      const double rg = 2.0 * (w - 0.25);
      m = b1 * m + (1 - b1) * rg;
      v = b2 * v + (1 - b2) * rg * rg;
      const double mhat = m / (1 - std::pow(b1, t));
      const double vhat = v / (1 - std::pow(b2, t));
      w -= lr * mhat / (std::sqrt(vhat) + eps);
      CHECK(std::abs(params[0].value[0] - w) < 1e-5);
    }
  }

  TEST_CASE("zero learning rate leaves parameters unchanged") {
    auto params = one_param(0.3f);
    Optimizer opt(OptimSpec::generator_default(), params);
    nn::Gradients g(params);
    g[0][0] = 10.0f;
    for (int i = 0; i < 5; ++i) opt.step(params, g, 0.0);
    CHECK(params[0].value[0] == 0.3f);
  }

  TEST_CASE("state restore continues identically and rejects foreign layouts") {
    auto a = one_param(1.0f);
    auto b = one_param(1.0f);
    Optimizer oa(OptimSpec::discriminator_default(), a);
    nn::Gradients g(a);
    g[0][0] = 0.5f;
    for (int i = 0; i < 3; ++i) oa.step(a, g, 1e-2);
    b = a;
    Optimizer ob(OptimSpec::discriminator_default(), b);
    ob.restore(oa.state());
    for (int i = 0; i < 3; ++i) {
      oa.step(a, g, 1e-2);
      ob.step(b, g, 1e-2);
    }
    CHECK(a[0].value[0] == b[0].value[0]);

    nn::ParameterSet two;
    two.add("w", {2}, {0.0f, 0.0f});
    Optimizer other(OptimSpec::discriminator_default(), two);
    CHECK_THROWS(other.restore(oa.state()));
  }

  TEST_CASE("invalid specs are rejected") {
    OptimSpec s;
    s.momentum = 1.0;
    CHECK_THROWS(s.validate());
    s = OptimSpec{};
    s.base_lr = -1.0;
    CHECK_THROWS(s.validate());
    CHECK_THROWS(optim_kind_from_string("rmsprop"));
  }
}
