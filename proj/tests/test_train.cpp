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

#include <bit>
#include <cmath>

#include "dakd/train.hpp"
#include "support.hpp"

using namespace dakd;

namespace {

TrainingState small_state(std::uint64_t seed = 1) { return TrainingState(test::small_net(), test::small_disc(), seed); }

std::vector<std::uint64_t> loss_bits(const TrainLog& log) {
  std::vector<std::uint64_t> bits;
  for (const auto& r : log.iterations()) bits.push_back(std::bit_cast<std::uint64_t>(r.generator.value));
  return bits;
}

DistillConfig zero_lambdas(Paradigm p) {
  DistillConfig d;
  d.paradigm = p;
  d.lambda_kl_out = d.lambda_kl_feat = d.lambda_mse = d.lambda_pseudo = 0.0;
  return d;
}

// Full-size splits holding one scene each, so every batch is the same
// labeled batch.
TwoDomainData single_scene_data(std::uint64_t seed) {
  const SceneSpec spec;
  auto make = [&](Domain d, const DomainShiftSpec& shift) {
    auto ds = std::make_shared<Dataset>();
    ds->domain = d;
    ds->num_classes = spec.num_classes();
    auto s = generate_scene(spec, shift, seed);
    ds->images.push_back(std::move(s.image));
    ds->labels.push_back(std::move(s.label));
    return ds;
  };
  return {make(Domain::kSource, DomainShiftSpec::source_default()),
          make(Domain::kTarget, DomainShiftSpec::target_default()), nullptr};
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("zero learning rate leaves the generator unchanged") {
    auto state = small_state();
    const auto before = state.net.snapshot();
    auto plan = test::small_plan(3);
    plan.gen_optim.base_lr = 0.0;
    pretrain_da(state, test::small_data(), plan);
    CHECK(state.net.snapshot().bit_identical(before));
    CHECK(state.iteration == 3);
  }

  TEST_CASE("discriminator BCE starts near ln 2") {
    auto state = small_state();
    const auto log = pretrain_da(state, test::small_data(), test::small_plan(1));
    CHECK(std::abs(log.iterations()[0].disc_out - std::log(2.0)) < 0.3);
    CHECK(std::abs(log.iterations()[0].disc_feat - std::log(2.0)) < 0.3);
  }

  TEST_CASE("logged total equals the sum of its parts and lr follows poly decay") {
    auto state = small_state();
    auto plan = test::small_plan(6);
    const auto log = pretrain_da(state, test::small_data(), plan);
    REQUIRE(log.iterations().size() == 6);
    auto spec = plan.gen_optim;
    spec.max_iters = plan.max_iters;
    for (const auto& r : log.iterations()) {
      CHECK(std::abs(r.generator.value - r.generator.breakdown_sum()) <= 1e-12 * (1.0 + r.generator.value));
      CHECK(r.lr == poly_lr(spec, r.iter));
    }
  }

  TEST_CASE("a single batch is fitted within 200 steps") {
    const auto data = single_scene_data(21);
    TrainingState state(SegNetConfig::student_preset(), DiscriminatorConfig{}, 4);
    auto plan = test::small_plan(200);
    plan.batch_size = 1;
    plan.adv_weight_out = plan.adv_weight_feat = 0.0;
    plan.gen_optim.kind = OptimKind::kAdam;
    plan.gen_optim.base_lr = 1e-3;
    plan.gen_optim.poly_power = 0.0;
    plan.gen_optim.weight_decay = 0.0;
    const auto log = pretrain_da(state, data, plan);
    CHECK(log.iterations().back().generator.breakdown.at("seg_main") < 0.05);
  }

  TEST_CASE("an untrained network is near chance and supervised training beats it") {
    const auto& data = test::small_data();
    auto state = small_state(12);
    const auto before = evaluate(state.net, *data.target_val);
    CHECK(before.miou < 0.2);
    CHECK(before.pixel_accuracy < 0.5);

    // No adversarial terms and no domain gap: plain supervised training.
    auto same = data;
    same.target_train = data.source_train;
    auto plan = test::small_plan(500);
    plan.adv_weight_out = plan.adv_weight_feat = 0.0;
    pretrain_da(state, same, plan);
    const auto after = evaluate(state.net, *data.source_train);
    CHECK(after.miou > 1.0 / 6.0);
    CHECK(after.pixel_accuracy > before.pixel_accuracy);
  }

  TEST_CASE("runs are deterministic") {
    auto a = small_state(), b = small_state();
    const auto la = pretrain_da(a, test::small_data(), test::small_plan(5));
    const auto lb = pretrain_da(b, test::small_data(), test::small_plan(5));
    CHECK(loss_bits(la) == loss_bits(lb));
    CHECK(a.snapshot().bit_identical(b.snapshot()));
  }

  TEST_CASE("a resumed run matches an uninterrupted one bit for bit") {
    const test::TempDir dir("resume");
    auto plan = test::small_plan(8);
    plan.checkpoint_every = 4;
    auto full = small_state();
    const auto full_log = pretrain_da(full, test::small_data(), plan);

    auto partial = small_state();
    bool saved = false;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](const TrainingState& s, const TrainLog&) {
      if (saved) return;
      save_checkpoint(dir.path() / "mid.json", make_checkpoint(s, state_config(s, "student")));
      saved = true;
    };
    pretrain_da(partial, test::small_data(), plan, hooks);
    REQUIRE(saved);

    auto resumed = state_from_checkpoint(load_checkpoint(dir.path() / "mid.json"));
    CHECK(resumed.iteration == 4);
    auto rplan = plan;
    rplan.resume = true;
    const auto tail = pretrain_da(resumed, test::small_data(), rplan);
    REQUIRE(tail.iterations().size() == 4);
    for (int i = 0; i < 4; ++i) {
      CHECK(tail.iterations()[i].iter == 4 + i);
      CHECK(std::bit_cast<std::uint64_t>(tail.iterations()[i].generator.value) ==
            std::bit_cast<std::uint64_t>(full_log.iterations()[4 + i].generator.value));
    }
    CHECK(resumed.snapshot().bit_identical(full.snapshot()));
  }

  TEST_CASE("self-distillation has zero KL and MSE at the first iteration") {
    auto state = small_state(2);
    pretrain_da(state, test::small_data(), test::small_plan(3));
    const FrozenSegNet teacher = freeze(state.net);
    auto plan = test::small_plan(1);
    plan.distill.paradigm = Paradigm::kC;
    const auto log = distill(teacher, state, test::small_data(), plan);
    const auto& b = log.iterations()[0].distill.breakdown;
    for (const char* k : {"source/kl_out", "source/kl_feat", "source/mse", "target/kl_out", "target/kl_feat",
                          "target/mse"}) {
      CHECK_MESSAGE(std::abs(b.at(k)) < 1e-12, k);
    }
    CHECK(b.at("target/pseudo") > 0.0);
  }

  TEST_CASE("paradigm a has no target terms and paradigm b no source terms") {
    auto teacher_state = small_state(7);
    const FrozenSegNet teacher = freeze(teacher_state.net);
    for (const auto p : {Paradigm::kA, Paradigm::kB}) {
      auto student = small_state(8);
      auto plan = test::small_plan(2);
      plan.distill.paradigm = p;
      const auto log = distill(teacher, student, test::small_data(), plan);
      const std::string off = p == Paradigm::kA ? "target/" : "source/";
      const std::string on = p == Paradigm::kA ? "source/" : "target/";
      for (const auto& r : log.iterations()) {
        for (const char* t : {"kl_out", "kl_feat", "mse", "pseudo"}) CHECK(r.distill.breakdown.at(off + t) == 0.0);
        CHECK(r.distill.breakdown.at(on + "kl_out") > 0.0);
      }
    }
  }

  TEST_CASE("distillation never moves the teacher") {
    auto teacher_state = small_state(7);
    const FrozenSegNet teacher = freeze(teacher_state.net);
    const auto before = teacher.snapshot();
    auto student = small_state(8);
    auto plan = test::small_plan(3);
    plan.distill.paradigm = Paradigm::kC;
    distill(teacher, student, test::small_data(), plan);
    CHECK(teacher.snapshot().bit_identical(before));
  }

  TEST_CASE("zero distillation weights reproduce the pretraining continuation") {
    auto base = small_state(5);
    pretrain_da(base, test::small_data(), test::small_plan(4));
    const FrozenSegNet teacher = freeze(small_state(6).net);
    auto plan = test::small_plan(6, 9);
    auto cont = base;
    const auto cont_log = pretrain_da(cont, test::small_data(), plan);
    for (const auto p : {Paradigm::kA, Paradigm::kB, Paradigm::kC}) {
      auto student = base;
      auto dplan = plan;
      dplan.distill = zero_lambdas(p);
      const auto log = distill(teacher, student, test::small_data(), dplan);
      CHECK(loss_bits(log) == loss_bits(cont_log));
      CHECK(student.snapshot().bit_identical(cont.snapshot()));
    }
  }

  TEST_CASE("paradigm d requires a warm start and distillation checks its inputs") {
    auto plan = test::small_plan(2);
    plan.distill.paradigm = Paradigm::kD;
    CHECK_THROWS_AS(plan.validate_for_distill(), std::invalid_argument);
    auto student = small_state();
    const FrozenSegNet teacher = freeze(small_state(2).net);
    CHECK_THROWS(distill(teacher, student, test::small_data(), plan));

    auto wide = test::small_net();
    wide.feature_tap_width = 12;
    const FrozenSegNet wide_teacher = freeze(SegmentationNet(wide, 3));
    auto cplan = test::small_plan(1);
    cplan.distill.paradigm = Paradigm::kC;
    CHECK_THROWS_WITH_AS(distill(wide_teacher, student, test::small_data(), cplan),
                         doctest::Contains("adapter"), std::invalid_argument);
    student.ensure_adapter(12, 4);
    CHECK_NOTHROW(distill(wide_teacher, student, test::small_data(), cplan));
  }

  TEST_CASE("a diverging run aborts with a diagnostic") {
    auto state = small_state();
    auto plan = test::small_plan(50);
    plan.gen_optim.base_lr = 1e12;
    try {
      pretrain_da(state, test::small_data(), plan);
      FAIL("expected the run to abort");
    } catch (const TrainingAborted& e) {
      CHECK(std::string(e.what()).find("non-finite loss at iteration") != std::string::npos);
    }
  }

  TEST_CASE("jsonl log has one record per iteration and evaluation") {
    auto state = small_state();
    auto plan = test::small_plan(4);
    plan.eval_every = 2;
    const auto log = pretrain_da(state, test::small_data(), plan);
    CHECK(log.evaluations().size() == 2);
    const std::string text = log.to_jsonl(test::small_scene().classes);
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);
    const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
    CHECK(first.at("iter") == 0);
  }
}
