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

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dakd/nn.hpp"

namespace dakd {

enum class OptimKind { kSgdNesterov, kAdam };

std::string to_string(OptimKind k);
OptimKind optim_kind_from_string(const std::string& s);

/// Optimizer hyperparameters with a polynomial learning-rate decay.
struct OptimSpec {
  OptimKind kind = OptimKind::kSgdNesterov;
  double base_lr = 2.5e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double poly_power = 0.9;
  int max_iters = 5000;
  // Adam moments; momentum doubles as beta1.
  double beta2 = 0.99;
  double adam_epsilon = 1e-8;

  void validate() const;

  /// SGD with Nesterov momentum as used for segmentation generators.
  static OptimSpec generator_default();
  /// Adam as used for discriminators.
  static OptimSpec discriminator_default();
};

void to_json(nlohmann::json& j, const OptimSpec& s);
void from_json(const nlohmann::json& j, OptimSpec& s);

/// base_lr * (1 - iter / max_iters)^poly_power; throws std::out_of_range
/// outside [0, max_iters].
double poly_lr(const OptimSpec& spec, int iter);

/// Moment buffers and step count of an Optimizer, for exact resumption.
struct OptimizerState {
  long long steps = 0;
  std::vector<std::vector<float>> first;
  std::vector<std::vector<float>> second;
};

/// Stateful optimizer over one ParameterSet.
class Optimizer {
 public:
  Optimizer(const OptimSpec& spec, const nn::ParameterSet& params);

  /// Applies one update with the given learning rate.
  void step(nn::ParameterSet& params, const nn::Gradients& grads, double lr);
  const OptimSpec& spec() const { return spec_; }

  OptimizerState state() const { return {steps_, first_, second_}; }
  /// Throws if the buffers do not match this optimizer's layout.
  void restore(const OptimizerState& state);

 private:
  OptimSpec spec_;
  long long steps_ = 0;
  std::vector<std::vector<float>> first_;
  std::vector<std::vector<float>> second_;
};

}  // namespace dakd
