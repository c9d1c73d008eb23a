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

#include "dakd/metrics.hpp"

#include <stdexcept>

namespace dakd {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 2) throw std::invalid_argument("confusion matrix needs at least 2 classes");
}

std::uint64_t ConfusionMatrix::counted_pixels() const {
  std::uint64_t total = 0;
  for (auto c : counts_) total += c;
  return total;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw std::invalid_argument("prediction and ground truth differ in shape");
  }
  if (pred.num_classes() != num_classes_ || gt.num_classes() != num_classes_) {
    throw std::invalid_argument("label class count does not match the confusion matrix");
  }
  for (std::size_t p = 0; p < gt.pixels(); ++p) {
    if (pred[p] == kIgnoreLabel) throw std::invalid_argument("predictions may not contain IGNORE");
  }
  for (std::size_t p = 0; p < gt.pixels(); ++p) {
    if (gt[p] == kIgnoreLabel) {
      ++ignored_;
      continue;
    }
    ++counts_[static_cast<std::size_t>(gt[p]) * num_classes_ + pred[p]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw std::invalid_argument("cannot merge matrices of different size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  ignored_ += other.ignored_;
}

nlohmann::json ConfusionMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (int g = 0; g < num_classes_; ++g) {
    nlohmann::json row = nlohmann::json::array();
    for (int p = 0; p < num_classes_; ++p) row.push_back(count(g, p));
    rows.push_back(row);
  }
  return {{"num_classes", num_classes_}, {"counts", rows}, {"ignored_pixels", ignored_}};
}

ConfusionMatrix ConfusionMatrix::from_json(const nlohmann::json& j) {
  ConfusionMatrix cm(j.at("num_classes").get<int>());
  const auto& rows = j.at("counts");
  if (rows.size() != static_cast<std::size_t>(cm.num_classes_)) throw std::invalid_argument("bad confusion matrix");
  for (int g = 0; g < cm.num_classes_; ++g) {
    if (rows[g].size() != static_cast<std::size_t>(cm.num_classes_)) {
      throw std::invalid_argument("bad confusion matrix row");
    }
    for (int p = 0; p < cm.num_classes_; ++p) {
      cm.counts_[static_cast<std::size_t>(g) * cm.num_classes_ + p] = rows[g][p].get<std::uint64_t>();
    }
  }
  cm.ignored_ = j.at("ignored_pixels").get<std::uint64_t>();
  return cm;
}

ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& pred, const LabelMap& gt) {
  cm.accumulate(pred, gt);
  return cm;
}

EvalReport compute_report(const ConfusionMatrix& cm, int num_images, const EvalOptions& options) {
  const int c = cm.num_classes();
  const std::uint64_t total = cm.counted_pixels();
  if (total == 0) throw std::invalid_argument("cannot report on an empty confusion matrix");

  EvalReport r;
  r.num_images = num_images;
  std::uint64_t trace = 0;
  double iou_sum = 0.0;
  int defined = 0;
  for (int k = 0; k < c; ++k) {
    const std::uint64_t tp = cm.count(k, k);
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.count(k, j);
      col += cm.count(j, k);
    }
    trace += tp;
    const std::uint64_t uni = row + col - tp;  // TP + FN + FP
    if (uni == 0) {
      r.per_class_iou.push_back(std::nullopt);
      if (options.undefined_as_zero) ++defined;
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class_iou.push_back(iou);
    iou_sum += iou;
    ++defined;
  }
  r.miou = defined > 0 ? iou_sum / defined : 0.0;
  r.pixel_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

nlohmann::json EvalReport::to_json(const std::vector<std::string>& class_names) const {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t k = 0; k < per_class_iou.size(); ++k) {
    const std::string name = k < class_names.size() ? class_names[k] : "class" + std::to_string(k);
    per_class.push_back(
        {{"class", name}, {"iou", per_class_iou[k] ? nlohmann::json(*per_class_iou[k]) : nlohmann::json(nullptr)}});
  }
  return {{"per_class_iou", per_class},
          {"miou", miou},
          {"pixel_accuracy", pixel_accuracy},
          {"num_images", num_images}};
}

}  // namespace dakd
