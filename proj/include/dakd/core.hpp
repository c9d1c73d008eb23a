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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dakd {

/// Label value excluded from every loss and metric.
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Clamp applied inside every log of a probability.
inline constexpr double kLogEpsilon = 1e-12;

/// Dense row-major (H, W, C) array of doubles, channel index fastest.
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, int channels, double fill = 0.0);
  Grid(int height, int width, int channels, std::vector<double> values);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return values_.size(); }

  double& at(int y, int x, int c) { return values_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return values_[index(y, x, c)]; }

  /// Channel vector of one pixel.
  std::span<double> pixel(std::size_t p) {
    return {values_.data() + p * channels_, static_cast<std::size_t>(channels_)};
  }
  std::span<const double> pixel(std::size_t p) const {
    return {values_.data() + p * channels_, static_cast<std::size_t>(channels_)};
  }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool all_finite() const;

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> values_;
};

/// RGB image in [0, 1], at least 8x8.
class ImageTensor : public Grid {
 public:
  ImageTensor() = default;
  explicit ImageTensor(Grid grid);
};

/// Pre-softmax class scores.
class LogitMap : public Grid {
 public:
  LogitMap() = default;
  explicit LogitMap(Grid grid);
};

/// Per-pixel class distributions; each pixel sums to 1 within 1e-5.
class ProbabilityMap : public Grid {
 public:
  ProbabilityMap() = default;
  /// Validates the distribution invariants.
  explicit ProbabilityMap(Grid grid);

  /// For producers that normalise by construction.
  static ProbabilityMap trusted(Grid grid);

 private:
  struct TrustedTag {};
  ProbabilityMap(Grid grid, TrustedTag) : Grid(std::move(grid)) {}
};

/// Intermediate activations at the distillation tap, (h, w, D).
class FeatureMap : public Grid {
 public:
  FeatureMap() = default;
  explicit FeatureMap(Grid grid);
};

/// Per-pixel class ids in [0, C) or kIgnoreLabel.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int height, int width, int num_classes, std::vector<std::uint8_t> values);
  LabelMap(int height, int width, int num_classes, std::uint8_t fill = 0);

  int height() const { return height_; }
  int width() const { return width_; }
  int num_classes() const { return num_classes_; }
  std::size_t pixels() const { return values_.size(); }

  std::uint8_t at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, std::uint8_t v);
  std::uint8_t operator[](std::size_t p) const { return values_[p]; }

  const std::vector<std::uint8_t>& values() const { return values_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int num_classes_ = 0;
  std::vector<std::uint8_t> values_;
};

enum class Domain { kSource, kTarget };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

/// Uniform-shape images from one domain; labels only on labelled source batches.
struct DomainBatch {
  Domain domain = Domain::kSource;
  std::vector<ImageTensor> images;
  std::optional<std::vector<LabelMap>> labels;

  /// Throws if labels disagree with images in count or shape.
  void validate() const;
};

enum class Paradigm { kA, kB, kC, kD };
enum class KlDirection { kStudentFirst, kTeacherFirst };
enum class Reduction { kMean, kSum };

std::string to_string(Paradigm p);
Paradigm paradigm_from_string(const std::string& s);
std::string to_string(KlDirection d);
KlDirection kl_direction_from_string(const std::string& s);
std::string to_string(Reduction r);
Reduction reduction_from_string(const std::string& s);

/// Weights of the distillation objective. Feature-level KL defaults to a
/// tenth of the output-level KL weight.
struct DistillConfig {
  double lambda_kl_out = 0.1;
  double lambda_kl_feat = 0.01;
  double lambda_mse = 0.01;
  double lambda_pseudo = 1.0;
  double lambda_target = 1.0;
  Paradigm paradigm = Paradigm::kC;
  KlDirection kl_direction = KlDirection::kStudentFirst;
  Reduction reduction = Reduction::kMean;

  void validate() const;
};

/// Numerically stable per-pixel softmax. Throws std::domain_error on
/// non-finite logits.
ProbabilityMap softmax(const LogitMap& logits);

/// Pulls a gradient with respect to probabilities back to the logits.
Grid softmax_backward(const ProbabilityMap& probs, const Grid& grad_probs);

/// Per-pixel argmax; ties go to the lowest class index.
LabelMap pseudo_labels(const ProbabilityMap& teacher_probs);

/// Corner-aligned bilinear interpolation over an arbitrary grid.
Grid bilinear_resize(const Grid& input, int out_h, int out_w);
FeatureMap bilinear_resize(const FeatureMap& input, int out_h, int out_w);
/// Renormalises each pixel after interpolation.
ProbabilityMap bilinear_resize(const ProbabilityMap& input, int out_h, int out_w);

/// Adjoint of bilinear_resize(Grid): scatters an output gradient back to
/// an (in_h, in_w) grid.
Grid bilinear_resize_backward(const Grid& grad_out, int in_h, int in_w);

}  // namespace dakd
