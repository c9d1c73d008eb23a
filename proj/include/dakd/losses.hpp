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

#pragma once

#include <map>
#include <string>
#include <vector>

#include "dakd/core.hpp"

namespace dakd {

/// Scalar loss with its named, already-weighted components. `value` is the
/// sum of `breakdown`.
struct LossValue {
  double value = 0.0;
  std::map<std::string, double> breakdown;
  /// Non-fatal conditions, e.g. "all_ignored" when no pixel was counted.
  std::vector<std::string> warnings;

  static LossValue single(const std::string& name, double value);
  static LossValue zero(const std::string& name) { return single(name, 0.0); }

  double breakdown_sum() const;
  bool has_warning(const std::string& w) const;

  /// Scales value and every component.
  LossValue scaled(double factor) const;
  /// Merges components under `prefix/`.
  void add(const std::string& prefix, const LossValue& other);
};

/// A loss together with its gradient with respect to the student-side
/// input (probabilities, discriminator outputs, or features).
struct LossWithGrad {
  LossValue loss;
  Grid grad;
};

/// Cross entropy against labels; IGNORE pixels contribute nothing.
LossWithGrad seg_ce(const ProbabilityMap& probs, const LabelMap& gt, Reduction reduction = Reduction::kMean);

/// Generator-side adversarial loss: -log d over the discriminator's
/// source-probability field `d` (H, W, 1).
LossWithGrad adv_generator(const Grid& source_prob, Reduction reduction = Reduction::kMean);

/// Discriminator BCE; label 1 for source inputs, 0 for target inputs.
LossWithGrad disc_bce(const Grid& source_prob, bool is_source, Reduction reduction = Reduction::kMean);

/// weight * sum_i KL(q_s || q_t) for STUDENT_FIRST, KL(q_t || q_s) for
/// TEACHER_FIRST. The teacher map is a constant.
LossWithGrad kl_distill(const ProbabilityMap& student, const ProbabilityMap& teacher, double weight,
                        KlDirection direction = KlDirection::kStudentFirst,
                        Reduction reduction = Reduction::kMean);

/// weight * sum_i ||s_i - t_i||^2. The smaller map is bilinearly resized to
/// the larger one; the gradient is returned at the student's own size.
LossWithGrad mse_distill(const FeatureMap& student, const FeatureMap& teacher, double weight,
                         Reduction reduction = Reduction::kMean);

/// Cross entropy against teacher pseudo labels, scaled by weight.
LossWithGrad pseudo_ce(const ProbabilityMap& student, const LabelMap& teacher_pseudo, double weight,
                       Reduction reduction = Reduction::kMean);

/// The four distillation terms computed on one domain. Each already carries
/// its own lambda.
struct DistillTerms {
  LossValue kl_out = LossValue::zero("kl_out");
  LossValue kl_feat = LossValue::zero("kl_feat");
  LossValue mse = LossValue::zero("mse");
  LossValue pseudo = LossValue::zero("pseudo");

  double sum() const { return kl_out.value + kl_feat.value + mse.value + pseudo.value; }
  /// Multi-level KL: output-level plus feature-level.
  double kl_total() const { return kl_out.value + kl_feat.value; }
};

/// Whether a paradigm distils on the given domain.
bool paradigm_uses(Paradigm paradigm, Domain domain);

/// Source terms plus lambda_target times target terms, after zeroing the
/// domain the paradigm does not distil on. Breakdown keys are
/// "source/<term>" and "target/<term>" (target entries already scaled).
LossValue distill_objective(const DistillTerms& source, const DistillTerms& target, const DistillConfig& cfg);

}  // namespace dakd
