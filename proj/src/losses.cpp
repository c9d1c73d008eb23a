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

#include "dakd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dakd {

namespace {

double reduction_scale(Reduction reduction, std::size_t counted) {
  if (reduction == Reduction::kSum || counted == 0) return 1.0;
  return 1.0 / static_cast<double>(counted);
}

// log(max(p, eps)) and its derivative with respect to p.
double clamped_log(double p) { return std::log(std::max(p, kLogEpsilon)); }
double clamped_log_grad(double p) { return p > kLogEpsilon ? 1.0 / p : 0.0; }

void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

void require_label_shape(const ProbabilityMap& probs, const LabelMap& labels, const char* what) {
  if (probs.height() != labels.height() || probs.width() != labels.width()) {
    throw std::invalid_argument(std::string(what) + ": label shape does not match probabilities");
  }
  if (probs.channels() != labels.num_classes()) {
    throw std::invalid_argument(std::string(what) + ": class count mismatch");
  }
}

void require_probability_field(const Grid& field, const char* what) {
  if (field.channels() != 1) throw std::invalid_argument(std::string(what) + ": expected one channel");
  if (!field.all_finite()) throw std::domain_error(std::string(what) + ": non-finite discriminator output");
}

LossWithGrad weighted_ce(const ProbabilityMap& probs, const LabelMap& gt, double weight, Reduction reduction,
                         const std::string& name) {
  Grid grad(probs.height(), probs.width(), probs.channels());
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t p = 0; p < probs.pixels(); ++p) {
    if (gt[p] == kIgnoreLabel) continue;
    ++counted;
    total -= clamped_log(probs.pixel(p)[gt[p]]);
  }
  const double scale = weight * reduction_scale(reduction, counted);
  for (std::size_t p = 0; p < probs.pixels(); ++p) {
    if (gt[p] == kIgnoreLabel) continue;
    grad.pixel(p)[gt[p]] = -scale * clamped_log_grad(probs.pixel(p)[gt[p]]);
  }
  LossWithGrad out{LossValue::single(name, scale * total), std::move(grad)};
  if (counted == 0) out.loss.warnings.push_back("all_ignored");
  return out;
}

}  // namespace

LossValue LossValue::single(const std::string& name, double value) {
  LossValue out;
  out.value = value;
  out.breakdown[name] = value;
  return out;
}

double LossValue::breakdown_sum() const {
  double sum = 0.0;
  for (const auto& [name, v] : breakdown) sum += v;
  return sum;
}

bool LossValue::has_warning(const std::string& w) const {
  return std::find(warnings.begin(), warnings.end(), w) != warnings.end();
}

LossValue LossValue::scaled(double factor) const {
  LossValue out = *this;
  out.value *= factor;
  for (auto& [name, v] : out.breakdown) v *= factor;
  return out;
}

void LossValue::add(const std::string& prefix, const LossValue& other) {
  value += other.value;
  for (const auto& [name, v] : other.breakdown) breakdown[prefix + "/" + name] += v;
  for (const auto& w : other.warnings) warnings.push_back(prefix + "/" + w);
}

LossWithGrad seg_ce(const ProbabilityMap& probs, const LabelMap& gt, Reduction reduction) {
  require_label_shape(probs, gt, "seg_ce");
  return weighted_ce(probs, gt, 1.0, reduction, "seg");
}

LossWithGrad adv_generator(const Grid& source_prob, Reduction reduction) {
  require_probability_field(source_prob, "adv_generator");
  const double scale = reduction_scale(reduction, source_prob.pixels());
  Grid grad(source_prob.height(), source_prob.width(), 1);
  double total = 0.0;
  for (std::size_t i = 0; i < source_prob.size(); ++i) {
    const double d = std::clamp(source_prob.values()[i], kLogEpsilon, 1.0 - kLogEpsilon);
    total -= std::log(d);
    const double raw = source_prob.values()[i];
    grad.values()[i] = (raw > kLogEpsilon && raw < 1.0 - kLogEpsilon) ? -scale / d : 0.0;
  }
  return {LossValue::single("adv", scale * total), std::move(grad)};
}

LossWithGrad disc_bce(const Grid& source_prob, bool is_source, Reduction reduction) {
  require_probability_field(source_prob, "disc_bce");
  const double scale = reduction_scale(reduction, source_prob.pixels());
  Grid grad(source_prob.height(), source_prob.width(), 1);
  double total = 0.0;
  for (std::size_t i = 0; i < source_prob.size(); ++i) {
    const double raw = source_prob.values()[i];
    const double d = std::clamp(raw, kLogEpsilon, 1.0 - kLogEpsilon);
    const bool interior = raw > kLogEpsilon && raw < 1.0 - kLogEpsilon;
    if (is_source) {
      total -= std::log(d);
      grad.values()[i] = interior ? -scale / d : 0.0;
    } else {
      total -= std::log(1.0 - d);
      grad.values()[i] = interior ? scale / (1.0 - d) : 0.0;
    }
  }
  return {LossValue::single("bce", scale * total), std::move(grad)};
}

LossWithGrad kl_distill(const ProbabilityMap& student, const ProbabilityMap& teacher, double weight,
                        KlDirection direction, Reduction reduction) {
  require_same_grid(student, teacher, "kl_distill");
  const double scale = weight * reduction_scale(reduction, student.pixels());
  Grid grad(student.height(), student.width(), student.channels());
  double total = 0.0;
  for (std::size_t p = 0; p < student.pixels(); ++p) {
    const auto s = student.pixel(p);
    const auto t = teacher.pixel(p);
    auto g = grad.pixel(p);
    for (std::size_t c = 0; c < s.size(); ++c) {
      if (direction == KlDirection::kStudentFirst) {
        // s ln s - s ln t; a zero student entry contributes nothing.
        if (s[c] > 0.0) total += s[c] * (clamped_log(s[c]) - clamped_log(t[c]));
        g[c] = scale * (clamped_log(s[c]) - clamped_log(t[c]) + (s[c] > kLogEpsilon ? 1.0 : 0.0));
      } else {
        if (t[c] > 0.0) total += t[c] * (clamped_log(t[c]) - clamped_log(s[c]));
        g[c] = -scale * t[c] * clamped_log_grad(s[c]);
      }
    }
  }
  return {LossValue::single("kl", scale * total), std::move(grad)};
}

LossWithGrad mse_distill(const FeatureMap& student, const FeatureMap& teacher, double weight,
                         Reduction reduction) {
  if (student.channels() != teacher.channels()) {
    throw std::invalid_argument("mse_distill: channel width mismatch (" + std::to_string(student.channels()) +
                                " vs " + std::to_string(teacher.channels()) +
                                "); configure a feature adapter");
  }
  const int h = std::max(student.height(), teacher.height());
  const int w = std::max(student.width(), teacher.width());
  const Grid s = bilinear_resize(static_cast<const Grid&>(student), h, w);
  const Grid t = bilinear_resize(static_cast<const Grid&>(teacher), h, w);

  const double scale = weight * reduction_scale(reduction, s.pixels());
  Grid grad(h, w, s.channels());
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double diff = s.values()[i] - t.values()[i];
    total += diff * diff;
    grad.values()[i] = 2.0 * scale * diff;
  }
  return {LossValue::single("mse", scale * total),
          bilinear_resize_backward(grad, student.height(), student.width())};
}

LossWithGrad pseudo_ce(const ProbabilityMap& student, const LabelMap& teacher_pseudo, double weight,
                       Reduction reduction) {
  require_label_shape(student, teacher_pseudo, "pseudo_ce");
  return weighted_ce(student, teacher_pseudo, weight, reduction, "pseudo");
}

bool paradigm_uses(Paradigm paradigm, Domain domain) {
  switch (paradigm) {
    case Paradigm::kA: return domain == Domain::kSource;
    case Paradigm::kB:
    case Paradigm::kD: return domain == Domain::kTarget;
    case Paradigm::kC: return true;
  }
  return false;
}

LossValue distill_objective(const DistillTerms& source, const DistillTerms& target, const DistillConfig& cfg) {
  const auto add_terms = [](LossValue& out, const std::string& prefix, const DistillTerms& terms, double factor) {
    const std::pair<const char*, const LossValue*> named[] = {
        {"kl_out", &terms.kl_out}, {"kl_feat", &terms.kl_feat}, {"mse", &terms.mse}, {"pseudo", &terms.pseudo}};
    for (const auto& [name, term] : named) {
      const double v = factor * term->value;
      out.breakdown[prefix + "/" + name] = v;
      out.value += v;
    }
  };
  LossValue out;
  add_terms(out, "source", source, paradigm_uses(cfg.paradigm, Domain::kSource) ? 1.0 : 0.0);
  add_terms(out, "target", target, paradigm_uses(cfg.paradigm, Domain::kTarget) ? cfg.lambda_target : 0.0);
  return out;
}

}  // namespace dakd
