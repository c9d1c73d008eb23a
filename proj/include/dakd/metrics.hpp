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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dakd/core.hpp"

namespace dakd {

/// counts[g][p]: pixels with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return num_classes_; }
  std::uint64_t count(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred]; }
  std::uint64_t ignored_pixels() const { return ignored_; }
  std::uint64_t counted_pixels() const;

  void accumulate(const LabelMap& pred, const LabelMap& gt);
  void merge(const ConfusionMatrix& other);

  nlohmann::json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json& j);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int num_classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t ignored_ = 0;
};

/// Pure form of ConfusionMatrix::accumulate.
ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& pred, const LabelMap& gt);

struct EvalOptions {
  /// Count classes with an empty union as IoU 0 instead of excluding them.
  bool undefined_as_zero = false;
};

struct EvalReport {
  /// nullopt marks a class with an empty union.
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  int num_images = 0;

  nlohmann::json to_json(const std::vector<std::string>& class_names) const;
};

/// Throws std::invalid_argument when no pixel was counted.
EvalReport compute_report(const ConfusionMatrix& cm, int num_images = 0, const EvalOptions& options = {});

}  // namespace dakd
