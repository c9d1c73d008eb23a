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

#include "dakd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dakd {

std::string to_string(OptimKind k) { return k == OptimKind::kSgdNesterov ? "sgd_nesterov" : "adam"; }

OptimKind optim_kind_from_string(const std::string& s) {
  if (s == "sgd_nesterov") return OptimKind::kSgdNesterov;
  if (s == "adam") return OptimKind::kAdam;
  throw std::invalid_argument("unknown optimizer kind '" + s + "' (expected sgd_nesterov or adam)");
}

void OptimSpec::validate() const {
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw std::invalid_argument("base_lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(poly_power >= 0.0)) throw std::invalid_argument("poly_power must be >= 0");
  if (max_iters < 0) throw std::invalid_argument("max_iters must be >= 0");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must be in [0, 1)");
}

OptimSpec OptimSpec::generator_default() { return {}; }

OptimSpec OptimSpec::discriminator_default() {
  OptimSpec s;
  s.kind = OptimKind::kAdam;
  s.base_lr = 1e-4;
  s.weight_decay = 0.0;
  return s;
}

void to_json(nlohmann::json& j, const OptimSpec& s) {
  j = {{"kind", to_string(s.kind)},      {"base_lr", s.base_lr},       {"momentum", s.momentum},
       {"weight_decay", s.weight_decay}, {"poly_power", s.poly_power}, {"max_iters", s.max_iters},
       {"beta2", s.beta2},               {"adam_epsilon", s.adam_epsilon}};
}

void from_json(const nlohmann::json& j, OptimSpec& s) {
  s.kind = optim_kind_from_string(j.at("kind").get<std::string>());
  s.base_lr = j.at("base_lr").get<double>();
  s.momentum = j.at("momentum").get<double>();
  s.weight_decay = j.at("weight_decay").get<double>();
  s.poly_power = j.at("poly_power").get<double>();
  s.max_iters = j.at("max_iters").get<int>();
  s.beta2 = j.value("beta2", 0.99);
  s.adam_epsilon = j.value("adam_epsilon", 1e-8);
}

double poly_lr(const OptimSpec& spec, int iter) {
  if (iter < 0 || iter > spec.max_iters) {
    throw std::out_of_range("iteration " + std::to_string(iter) + " outside [0, " +
                            std::to_string(spec.max_iters) + "]");
  }
  if (spec.max_iters == 0) return spec.base_lr;
  const double remaining = 1.0 - static_cast<double>(iter) / spec.max_iters;
  return spec.base_lr * std::pow(remaining, spec.poly_power);
}

Optimizer::Optimizer(const OptimSpec& spec, const nn::ParameterSet& params) : spec_(spec) {
  spec_.validate();
  for (const auto& p : params) {
    first_.emplace_back(p.value.size(), 0.0f);
    if (spec_.kind == OptimKind::kAdam) second_.emplace_back(p.value.size(), 0.0f);
  }
}

void Optimizer::restore(const OptimizerState& state) {
  auto same_layout = [](const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].size() != b[i].size()) return false;
    }
    return true;
  };
  if (state.steps < 0 || !same_layout(state.first, first_) || !same_layout(state.second, second_)) {
    throw std::invalid_argument("optimizer state does not match the parameter layout");
  }
  steps_ = state.steps;
  first_ = state.first;
  second_ = state.second;
}

void Optimizer::step(nn::ParameterSet& params, const nn::Gradients& grads, double lr) {
  ++steps_;
  const auto mu = static_cast<float>(spec_.momentum);
  const auto wd = static_cast<float>(spec_.weight_decay);
  const auto rate = static_cast<float>(lr);
  if (spec_.kind == OptimKind::kSgdNesterov) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& value = params[i].value;
      auto& velocity = first_[i];
      const auto& g = grads[i];
      for (std::size_t k = 0; k < value.size(); ++k) {
        const float d = g[k] + wd * value[k];
        velocity[k] = mu * velocity[k] + d;
        value[k] -= rate * (d + mu * velocity[k]);
      }
    }
    return;
  }
  const auto b2 = static_cast<float>(spec_.beta2);
  const auto eps = static_cast<float>(spec_.adam_epsilon);
  const double correction1 = 1.0 - std::pow(spec_.momentum, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(steps_));
  const auto step_size = static_cast<float>(lr / correction1);
  const auto root2 = static_cast<float>(std::sqrt(correction2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].value;
    auto& m = first_[i];
    auto& v = second_[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const float d = g[k] + wd * value[k];
      m[k] = mu * m[k] + (1.0f - mu) * d;
      v[k] = b2 * v[k] + (1.0f - b2) * d * d;
      value[k] -= step_size * m[k] / (std::sqrt(v[k]) / root2 + eps);
    }
  }
}

}  // namespace dakd
