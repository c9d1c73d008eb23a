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
#include <random>

#include "dakd/losses.hpp"
#include "support.hpp"

using namespace dakd;

namespace {

ProbabilityMap pixel_probs(std::vector<double> p) {
  const int c = static_cast<int>(p.size());
  return ProbabilityMap(Grid(1, 1, c, std::move(p)));
}

Grid field(int h, int w, double v) { return Grid(h, w, 1, v); }

// Plain-loop KL(a || b) summed over pixels, for cross-checking.
double kl_oracle(const Grid& a, const Grid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.values()[i] > 0.0) s += a.values()[i] * std::log(a.values()[i] / b.values()[i]);
  }
  return s;
}

// Chains a probability-space loss through the softmax so the check runs
// against logits.
double via_logits(const Grid& z, const std::function<double(const ProbabilityMap&)>& loss) {
  return loss(softmax(LogitMap(z)));
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("seg_ce oracle examples") {
    const LabelMap gt0(1, 1, 3, std::vector<std::uint8_t>{0});
    CHECK(seg_ce(pixel_probs({1.0, 0.0, 0.0}), gt0).loss.value == doctest::Approx(0.0));
    CHECK(std::abs(seg_ce(pixel_probs({1.0 / 3, 1.0 / 3, 1.0 / 3}), gt0).loss.value - std::log(3.0)) < 1e-6);
  }

  TEST_CASE("seg_ce ignores IGNORE pixels") {
    const LabelMap gt(1, 2, 3, std::vector<std::uint8_t>{0, kIgnoreLabel});
    const ProbabilityMap a(Grid(1, 2, 3, {0.5, 0.25, 0.25, 0.1, 0.1, 0.8}));
    const ProbabilityMap b(Grid(1, 2, 3, {0.5, 0.25, 0.25, 0.9, 0.05, 0.05}));
    const auto la = seg_ce(a, gt);
    CHECK(la.loss.value == seg_ce(b, gt).loss.value);
    CHECK(std::abs(la.loss.value - std::log(2.0)) < 1e-12);
    for (int c = 0; c < 3; ++c) CHECK(la.grad.at(0, 1, c) == 0.0);
  }

  TEST_CASE("seg_ce on an all-IGNORE map is zero with a warning") {
    const LabelMap gt(2, 2, 3, kIgnoreLabel);
    std::mt19937_64 rng(1);
    const auto l = seg_ce(test::random_probs(rng, 2, 2, 3), gt);
    CHECK(l.loss.value == 0.0);
    CHECK(l.loss.has_warning("all_ignored"));
  }

  TEST_CASE("adv_generator oracle examples") {
    CHECK(adv_generator(field(3, 3, 1.0)).loss.value == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::abs(adv_generator(field(3, 3, 0.5)).loss.value - std::log(2.0)) < 1e-6);
    CHECK(std::abs(adv_generator(field(2, 2, 0.5), Reduction::kSum).loss.value - 4.0 * std::log(2.0)) < 1e-6);
    CHECK(std::abs(4.0 * std::log(2.0) - 2.7726) < 1e-4);
  }

  TEST_CASE("adv_generator clamps out-of-range probabilities") {
    const auto l = adv_generator(field(1, 1, 0.0));
    CHECK(std::isfinite(l.loss.value));
    CHECK(std::abs(l.loss.value + std::log(kLogEpsilon)) < 1e-9);
  }

  TEST_CASE("disc_bce oracle examples") {
    CHECK(disc_bce(field(2, 2, 1.0), true).loss.value == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(disc_bce(field(2, 2, 0.0), false).loss.value == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::abs(disc_bce(field(2, 2, 0.5), true).loss.value - std::log(2.0)) < 1e-6);
    CHECK(std::abs(disc_bce(field(2, 2, 0.5), false).loss.value - std::log(2.0)) < 1e-6);
  }

  TEST_CASE("kl_distill oracle examples") {
    std::mt19937_64 rng(2);
    const auto p = test::random_probs(rng, 3, 3, 4);
    CHECK(std::abs(kl_distill(p, p, 1.0).loss.value) < 1e-12);
    CHECK(std::abs(kl_distill(p, p, 1.0, KlDirection::kTeacherFirst).loss.value) < 1e-12);
    const auto l = kl_distill(pixel_probs({0.5, 0.5}), pixel_probs({0.25, 0.75}), 1.0);
    const long double ref = 0.5L * std::log(2.0L) + 0.5L * std::log(2.0L / 3.0L);
    CHECK(std::abs(l.loss.value - static_cast<double>(ref)) < 1e-6);
    CHECK(std::abs(l.loss.value - 0.14384) < 1e-5);
  }

  TEST_CASE("kl_distill directions match a plain-loop oracle") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = test::random_probs(rng, 4, 4, 3);
      const auto t = test::random_probs(rng, 4, 4, 3);
      CHECK(std::abs(kl_distill(s, t, 0.3, KlDirection::kStudentFirst, Reduction::kSum).loss.value -
                     0.3 * kl_oracle(s, t)) < 1e-10);
      CHECK(std::abs(kl_distill(s, t, 0.3, KlDirection::kTeacherFirst, Reduction::kSum).loss.value -
                     0.3 * kl_oracle(t, s)) < 1e-10);
    }
  }

  TEST_CASE("kl_distill is non-negative on 1000 random pairs") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
      const auto s = test::random_probs(rng, 1, 2, 4);
      const auto t = test::random_probs(rng, 1, 2, 4);
      CHECK(kl_distill(s, t, 1.0).loss.value >= -1e-9);
      CHECK(kl_distill(s, t, 1.0, KlDirection::kTeacherFirst).loss.value >= -1e-9);
    }
  }

  TEST_CASE("kl_distill survives zero probabilities") {
    const auto l = kl_distill(pixel_probs({1.0, 0.0}), pixel_probs({0.0, 1.0}), 1.0);
    CHECK(std::isfinite(l.loss.value));
    CHECK(l.grad.all_finite());
    CHECK_THROWS(kl_distill(pixel_probs({1.0, 0.0}), pixel_probs({0.2, 0.3, 0.5}), 1.0));
  }

  TEST_CASE("mse_distill oracle examples") {
    std::mt19937_64 rng(5);
    const FeatureMap f(test::random_grid(rng, 3, 3, 4));
    CHECK(mse_distill(f, f, 1.0).loss.value == 0.0);
    const FeatureMap s(Grid(1, 1, 2, {1.0, 0.0}));
    const FeatureMap t(Grid(1, 1, 2, {0.0, 1.0}));
    CHECK(std::abs(mse_distill(s, t, 0.01, Reduction::kSum).loss.value - 0.02) < 1e-12);
    const FeatureMap a(test::random_grid(rng, 4, 4, 3));
    const FeatureMap b(test::random_grid(rng, 4, 4, 3));
    CHECK(mse_distill(a, b, 0.2).loss.value == doctest::Approx(2.0 * mse_distill(a, b, 0.1).loss.value));
  }

  TEST_CASE("mse_distill aligns spatial sizes and rejects channel mismatch") {
    std::mt19937_64 rng(6);
    const FeatureMap small(test::random_grid(rng, 2, 2, 3));
    const FeatureMap big(test::random_grid(rng, 5, 5, 3));
    const auto l = mse_distill(small, big, 1.0);
    CHECK(l.grad.height() == 2);
    CHECK(l.grad.width() == 2);
    const auto up = bilinear_resize(small, 5, 5);
    CHECK(std::abs(l.loss.value - mse_distill(up, big, 1.0).loss.value) < 1e-12);
    CHECK_THROWS_WITH_AS(mse_distill(small, FeatureMap(test::random_grid(rng, 2, 2, 4)), 1.0),
                         doctest::Contains("adapter"), std::invalid_argument);
  }

  TEST_CASE("pseudo_ce oracle examples") {
    const auto teacher = pixel_probs({0.1, 0.7, 0.2});
    const auto pseudo = pseudo_labels(teacher);
    CHECK(pseudo[0] == 1);
    const auto l = pseudo_ce(pixel_probs({0.25, 0.5, 0.25}), pseudo, 1.0);
    CHECK(std::abs(l.loss.value - std::log(2.0)) < 1e-6);
    CHECK(pseudo_ce(pixel_probs({0.0, 1.0, 0.0}), pseudo, 1.0).loss.value == doctest::Approx(0.0));
  }

  TEST_CASE("pseudo_ce equals seg_ce against the teacher argmax") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      const auto p = test::random_probs(rng, 4, 4, 5);
      const auto q = test::random_probs(rng, 4, 4, 5);
      const auto a = pseudo_ce(p, pseudo_labels(q), 1.0);
      const auto b = seg_ce(p, pseudo_labels(q));
      CHECK(a.loss.value == b.loss.value);
      CHECK(a.grad == b.grad);
    }
  }

  TEST_CASE("distill_objective oracle examples") {
    const auto terms = [](double kl_out, double kl_feat, double mse, double pseudo) {
      DistillTerms t;
      t.kl_out = LossValue::single("kl_out", kl_out);
      t.kl_feat = LossValue::single("kl_feat", kl_feat);
      t.mse = LossValue::single("mse", mse);
      t.pseudo = LossValue::single("pseudo", pseudo);
      return t;
    };
    DistillConfig cfg;
    cfg.paradigm = Paradigm::kC;
    const auto src = terms(0.1, 0.01, 0.02, 0.7);
    const auto tgt = terms(0.2, 0.02, 0.04, 0.9);
    cfg.lambda_target = 0.5;
    const auto l = distill_objective(src, tgt, cfg);
    CHECK(std::abs(l.value - 1.41) < 1e-12);
    CHECK(std::abs(l.breakdown_sum() - l.value) < 1e-12);
    CHECK(std::abs(l.breakdown.at("target/pseudo") - 0.45) < 1e-12);

    cfg.lambda_target = 0.0;
    CHECK(distill_objective(src, tgt, cfg).value == src.sum());
    cfg.lambda_target = 1.0;
    CHECK(distill_objective(src, src, cfg).value == doctest::Approx(2.0 * src.sum()));

    cfg.paradigm = Paradigm::kA;
    CHECK(distill_objective(src, tgt, cfg).value == src.sum());
    for (const char* k : {"target/kl_out", "target/kl_feat", "target/mse", "target/pseudo"}) {
      CHECK(distill_objective(src, tgt, cfg).breakdown.at(k) == 0.0);
    }
    for (Paradigm p : {Paradigm::kB, Paradigm::kD}) {
      cfg.paradigm = p;
      CHECK(distill_objective(src, tgt, cfg).value == doctest::Approx(tgt.sum()));
    }
  }

  TEST_CASE("multi-level KL is the sum of both levels") {
    DistillTerms t;
    t.kl_out = LossValue::single("kl_out", 0.3);
    t.kl_feat = LossValue::single("kl_feat", 0.03);
    CHECK(t.kl_total() == 0.3 + 0.03);
    DistillConfig cfg;
    const auto l = distill_objective(t, DistillTerms{}, cfg);
    CHECK(l.breakdown.at("source/kl_out") + l.breakdown.at("source/kl_feat") == t.kl_total());
  }

  TEST_CASE("SUM equals MEAN times the counted pixels") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      const auto p = test::random_probs(rng, 4, 5, 3);
      const auto q = test::random_probs(rng, 4, 5, 3);
      const auto gt = test::random_labels(rng, 4, 5, 3, 0.3);
      std::size_t counted = 0;
      for (auto v : gt.values()) counted += v != kIgnoreLabel;
      if (counted == 0) continue;
      CHECK(seg_ce(p, gt, Reduction::kSum).loss.value ==
            doctest::Approx(seg_ce(p, gt, Reduction::kMean).loss.value * counted).epsilon(1e-12));
      CHECK(kl_distill(p, q, 1.0, KlDirection::kStudentFirst, Reduction::kSum).loss.value ==
            doctest::Approx(kl_distill(p, q, 1.0).loss.value * 20).epsilon(1e-12));
      const Grid d = test::random_grid(rng, 3, 3, 1, 0.05, 0.95);
      CHECK(disc_bce(d, false, Reduction::kSum).loss.value ==
            doctest::Approx(disc_bce(d, false).loss.value * 9).epsilon(1e-12));
    }
  }

  TEST_CASE("losses are non-negative on random inputs") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
      const auto p = test::random_probs(rng, 3, 3, 4);
      const auto q = test::random_probs(rng, 3, 3, 4);
      const auto gt = test::random_labels(rng, 3, 3, 4, 0.2);
      const Grid d = test::random_grid(rng, 3, 3, 1, 0.0, 1.0);
      CHECK(seg_ce(p, gt).loss.value >= -1e-9);
      CHECK(pseudo_ce(p, pseudo_labels(q), 1.0).loss.value >= -1e-9);
      CHECK(mse_distill(FeatureMap(p), FeatureMap(q), 1.0).loss.value >= 0.0);
      CHECK(disc_bce(d, true).loss.value >= -1e-9);
      CHECK(disc_bce(d, false).loss.value >= -1e-9);
      CHECK(adv_generator(d).loss.value >= -1e-9);
    }
  }

  TEST_CASE("gradients match central differences") {
    // A smaller version of the acceptance sweep; the full 20-instance check
    // per loss lives in the acceptance binary.
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 3; ++trial) {
      const Grid z = test::random_grid(rng, 4, 4, 3);
      const auto p = softmax(LogitMap(z));
      const auto t = test::random_probs(rng, 4, 4, 3);
      const auto gt = test::random_labels(rng, 4, 4, 3, 0.2);

      auto check = [&](const std::function<LossWithGrad(const ProbabilityMap&)>& loss) {
        const Grid analytic = softmax_backward(p, loss(p).grad);
        const Grid numeric = test::numeric_gradient(
            [&](const Grid& x) { return via_logits(x, [&](const ProbabilityMap& q) { return loss(q).loss.value; }); },
            z);
        CHECK(test::relative_error(analytic, numeric) < 1e-6);
      };
      check([&](const ProbabilityMap& q) { return seg_ce(q, gt); });
      check([&](const ProbabilityMap& q) { return kl_distill(q, t, 0.1); });
      check([&](const ProbabilityMap& q) { return kl_distill(q, t, 0.1, KlDirection::kTeacherFirst); });
      check([&](const ProbabilityMap& q) { return pseudo_ce(q, pseudo_labels(t), 1.0); });

      const FeatureMap fs(test::random_grid(rng, 4, 4, 3));
      const FeatureMap ft(test::random_grid(rng, 6, 6, 3));
      const Grid numeric = test::numeric_gradient(
          [&](const Grid& x) { return mse_distill(FeatureMap(x), ft, 0.01).loss.value; }, fs);
      CHECK(test::relative_error(mse_distill(fs, ft, 0.01).grad, numeric) < 1e-6);
    }
  }
}
