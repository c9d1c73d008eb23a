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

#include <algorithm>
#include <numeric>
#include <random>

#include "dakd/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dakd;

namespace {

LabelMap labels_2x2(std::vector<std::uint8_t> v, int c = 2) { return LabelMap(2, 2, c, std::move(v)); }

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("hand-built 2x2 example") {
    ConfusionMatrix cm(2);
    cm.accumulate(labels_2x2({0, 1, 1, 1}), labels_2x2({0, 1, 0, 1}));
    const auto r = compute_report(cm);
    CHECK(*r.per_class_iou[0] == doctest::Approx(0.5));
    CHECK(*r.per_class_iou[1] == doctest::Approx(2.0 / 3.0));
    CHECK(std::abs(r.miou - 0.5833) < 1e-4);
    CHECK(r.pixel_accuracy == 0.75);
  }

  TEST_CASE("perfect prediction gives ones on the diagonal only") {
    std::mt19937_64 rng(1);
    const auto gt = test::random_labels(rng, 8, 8, 4);
    ConfusionMatrix cm(4);
    cm.accumulate(gt, gt);
    for (int g = 0; g < 4; ++g) {
      for (int p = 0; p < 4; ++p) {
        if (g != p) CHECK(cm.count(g, p) == 0);
      }
    }
    const auto r = compute_report(cm);
    CHECK(r.miou == 1.0);
    CHECK(r.pixel_accuracy == 1.0);
  }

  TEST_CASE("all-IGNORE ground truth only counts ignored pixels") {
    ConfusionMatrix cm(3);
    cm.accumulate(LabelMap(4, 5, 3, 1), LabelMap(4, 5, 3, kIgnoreLabel));
    CHECK(cm.counted_pixels() == 0);
    CHECK(cm.ignored_pixels() == 20);
    CHECK_THROWS(compute_report(cm));
  }

  TEST_CASE("absent classes are UNDEFINED and excluded unless configured") {
    ConfusionMatrix cm(3);
    cm.accumulate(labels_2x2({0, 1, 1, 1}, 3), labels_2x2({0, 1, 0, 1}, 3));
    const auto r = compute_report(cm);
    CHECK_FALSE(r.per_class_iou[2].has_value());
    CHECK(std::abs(r.miou - (0.5 + 2.0 / 3.0) / 2.0) < 1e-12);
    const auto z = compute_report(cm, 1, EvalOptions{true});
    CHECK(std::abs(z.miou - (0.5 + 2.0 / 3.0) / 3.0) < 1e-12);
    const auto j = r.to_json({"a", "b", "c"});
    CHECK(j.at("per_class_iou")[2].at("iou").is_null());
  }

  TEST_CASE("agrees with the brute-force oracle on 100 random 16x16 pairs") {
    std::mt19937_64 rng(2);
    const int c = 6;
    std::vector<LabelMap> preds, gts;
    for (int i = 0; i < 100; ++i) {
      // Class 5 never appears in some pairs; IGNORE appears in most.
      const int classes = i % 3 == 0 ? 5 : 6;
      auto p = test::random_labels(rng, 16, 16, classes);
      auto g = test::random_labels(rng, 16, 16, classes, i % 4 == 0 ? 0.0 : 0.15);
      preds.emplace_back(16, 16, c, p.values());
      gts.emplace_back(16, 16, c, g.values());
    }
    ConfusionMatrix cm(c);
    for (int i = 0; i < 100; ++i) cm = accumulate(cm, preds[i], gts[i]);
    const auto ref = oracle::brute_force_metrics(preds, gts, c);
    for (int g = 0; g < c; ++g) {
      for (int p = 0; p < c; ++p) CHECK(cm.count(g, p) == ref.counts[g][p]);
    }
    CHECK(cm.ignored_pixels() == ref.ignored);
    const auto r = compute_report(cm, 100);
    for (int k = 0; k < c; ++k) {
      REQUIRE(r.per_class_iou[k].has_value() == ref.iou[k].has_value());
      if (ref.iou[k]) CHECK(std::abs(*r.per_class_iou[k] - *ref.iou[k]) <= 1e-12);
    }
    CHECK(std::abs(r.miou - ref.miou) <= 1e-12);
    CHECK(std::abs(r.pixel_accuracy - ref.pixel_accuracy) <= 1e-12);
  }

  TEST_CASE("merge equals accumulating the concatenation") {
    std::mt19937_64 rng(3);
    ConfusionMatrix all(4), left(4), right(4);
    for (int i = 0; i < 10; ++i) {
      const auto p = test::random_labels(rng, 6, 6, 4);
      const auto g = test::random_labels(rng, 6, 6, 4, 0.1);
      all.accumulate(p, g);
      (i < 4 ? left : right).accumulate(p, g);
    }
    left.merge(right);
    CHECK(left == all);
    CHECK(compute_report(left).miou == compute_report(all).miou);
  }

  TEST_CASE("counted plus ignored equals evaluated pixels") {
    std::mt19937_64 rng(4);
    ConfusionMatrix cm(5);
    for (int i = 0; i < 7; ++i) {
      cm.accumulate(test::random_labels(rng, 9, 7, 5), test::random_labels(rng, 9, 7, 5, 0.3));
    }
    CHECK(cm.counted_pixels() + cm.ignored_pixels() == 7u * 63u);
  }

  TEST_CASE("consistent class permutation permutes IoU and keeps the means") {
    std::mt19937_64 rng(5);
    std::vector<std::uint8_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto relabel = [&](const LabelMap& m) {
      std::vector<std::uint8_t> v = m.values();
      for (auto& x : v) x = x == kIgnoreLabel ? x : perm[x];
      return LabelMap(m.height(), m.width(), m.num_classes(), v);
    };
    ConfusionMatrix a(5), b(5);
    for (int i = 0; i < 5; ++i) {
      const auto p = test::random_labels(rng, 8, 8, 5);
      const auto g = test::random_labels(rng, 8, 8, 5, 0.1);
      a.accumulate(p, g);
      b.accumulate(relabel(p), relabel(g));
    }
    const auto ra = compute_report(a);
    const auto rb = compute_report(b);
    for (int k = 0; k < 5; ++k) CHECK(*ra.per_class_iou[k] == *rb.per_class_iou[perm[k]]);
    CHECK(std::abs(ra.miou - rb.miou) < 1e-12);
    CHECK(ra.pixel_accuracy == rb.pixel_accuracy);
  }

  TEST_CASE("IoU is one exactly when row and column are purely diagonal") {
    ConfusionMatrix cm(3);
    // Class 0 perfect; classes 1 and 2 confused.
    cm.accumulate(LabelMap(1, 4, 3, std::vector<std::uint8_t>{0, 0, 1, 2}),
                  LabelMap(1, 4, 3, std::vector<std::uint8_t>{0, 0, 2, 1}));
    const auto r = compute_report(cm);
    CHECK(*r.per_class_iou[0] == 1.0);
    CHECK(*r.per_class_iou[1] == 0.0);
    for (const auto& v : r.per_class_iou) {
      CHECK(*v >= 0.0);
      CHECK(*v <= 1.0);
    }
  }

  TEST_CASE("shape, class-count and IGNORE-prediction errors") {
    ConfusionMatrix cm(3);
    CHECK_THROWS(cm.accumulate(LabelMap(2, 2, 3), LabelMap(2, 3, 3)));
    CHECK_THROWS(cm.accumulate(LabelMap(2, 2, 4), LabelMap(2, 2, 4)));
    CHECK_THROWS(cm.accumulate(LabelMap(2, 2, 3, kIgnoreLabel), LabelMap(2, 2, 3)));
  }

  TEST_CASE("json round trip of the confusion matrix") {
    std::mt19937_64 rng(6);
    ConfusionMatrix cm(4);
    cm.accumulate(test::random_labels(rng, 5, 5, 4), test::random_labels(rng, 5, 5, 4, 0.2));
    CHECK(ConfusionMatrix::from_json(cm.to_json()) == cm);
  }
}
