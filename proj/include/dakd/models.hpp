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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dakd/core.hpp"
#include "dakd/nn.hpp"

namespace dakd {

/// Named parameter tensors plus the iteration they were taken at.
struct ParamSnapshot {
  std::vector<nn::Parameter> tensors;
  int iteration = 0;

  const nn::Parameter* find(const std::string& name) const;
  /// Bitwise comparison of names, shapes and values.
  bool bit_identical(const ParamSnapshot& other) const;
  /// Tensors whose name starts with `prefix`, with the prefix removed.
  ParamSnapshot with_prefix_stripped(const std::string& prefix) const;
};

struct SegNetConfig {
  int num_classes = 6;
  int base_width = 16;
  int depth = 4;
  int feature_tap_width = 32;
  int input_height = 64;
  int input_width = 64;
  /// Leading stride-2 blocks.
  int downsample = 2;
  /// RMS-normalize the tap activations per pixel, which keeps feature-level
  /// losses on a fixed scale regardless of network width or training time.
  /// Off by default: on ShapeScenes it cost both presets accuracy.
  bool tap_norm = false;

  void validate() const;

  static SegNetConfig teacher_preset();
  static SegNetConfig student_preset();

  friend bool operator==(const SegNetConfig&, const SegNetConfig&) = default;
};

void to_json(nlohmann::json& j, const SegNetConfig& c);
void from_json(const nlohmann::json& j, SegNetConfig& c);

/// Per-image network outputs for a batch. Both logit heads are at input
/// resolution.
struct SegNetOutput {
  std::vector<FeatureMap> feature;
  std::vector<LogitMap> aux_logits;
  std::vector<LogitMap> main_logits;
};

/// Activations kept from a forward pass for the matching backward pass.
struct SegNetTrace {
  nn::Tensor input;
  std::vector<nn::Tensor> blocks;
  /// Per-pixel divisors of the tap normalization, if enabled.
  std::vector<float> tap_rms;
};

/// Output-side gradients for SegmentationNet::backward; empty vectors mean
/// no gradient from that output.
struct SegNetGrads {
  std::vector<Grid> feature;
  std::vector<Grid> aux_logits;
  std::vector<Grid> main_logits;
};

/// Plain convolutional segmentation generator: a stack of 3x3 conv + ReLU
/// blocks, the second-to-last of which is the distillation tap. A 1x1
/// auxiliary head reads the tap and a 1x1 main head reads the last block;
/// both are bilinearly upsampled to the input size.
class SegmentationNet {
 public:
  SegmentationNet(const SegNetConfig& cfg, std::uint64_t seed);

  const SegNetConfig& config() const { return cfg_; }
  int tap_index() const { return cfg_.depth - 2; }
  int feature_height() const;
  int feature_width() const;

  SegNetOutput forward(std::span<const ImageTensor> batch, SegNetTrace* trace = nullptr) const;
  void backward(const SegNetTrace& trace, const SegNetGrads& grads, nn::Gradients& param_grads) const;

  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

  ParamSnapshot snapshot(int iteration = 0, const std::string& prefix = "") const;
  /// Copies matching `prefix`-named tensors in; throws on missing tensors or
  /// shape mismatch.
  void load(const ParamSnapshot& snapshot, const std::string& prefix = "");

 private:
  SegNetConfig cfg_;
  nn::ParameterSet params_;
  std::vector<nn::Conv2d> blocks_;
  nn::Conv2d aux_head_;
  nn::Conv2d main_head_;
};

/// A network whose parameters can no longer change. Only forward passes are
/// exposed.
class FrozenSegNet {
 public:
  explicit FrozenSegNet(SegmentationNet net) : net_(std::move(net)) {}

  const SegNetConfig& config() const { return net_.config(); }
  SegNetOutput forward(std::span<const ImageTensor> batch) const { return net_.forward(batch, nullptr); }
  ParamSnapshot snapshot(int iteration = 0) const { return net_.snapshot(iteration); }
  std::size_t parameter_count() const { return net_.parameter_count(); }

 private:
  const SegmentationNet net_;
};

FrozenSegNet freeze(SegmentationNet net);

struct DiscriminatorConfig {
  int in_channels = 6;
  int width = 16;
  int depth = 4;

  void validate() const;
  /// Output extent for an input extent (every layer is 3x3, stride 2,
  /// padding 1).
  int output_extent(int input_extent) const;

  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);

struct DiscTrace {
  nn::Tensor input;
  std::vector<nn::Tensor> layers;
};

/// Fully convolutional patch discriminator over probability maps. Output is
/// a per-cell probability that the input came from the source domain.
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

  const DiscriminatorConfig& config() const { return cfg_; }

  std::vector<Grid> forward(std::span<const ProbabilityMap> batch, DiscTrace* trace = nullptr) const;
  /// Accumulates parameter gradients and, when `input_grad` is set, returns
  /// gradients with respect to the input probability maps.
  std::vector<Grid> backward(const DiscTrace& trace, std::span<const Grid> grad_out, nn::Gradients& param_grads,
                             bool input_grad = true) const;

  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

  ParamSnapshot snapshot(int iteration = 0, const std::string& prefix = "") const;
  void load(const ParamSnapshot& snapshot, const std::string& prefix = "");

 private:
  DiscriminatorConfig cfg_;
  nn::ParameterSet params_;
  std::vector<nn::Conv2d> layers_;
};

/// Learned 1x1 projection of student tap features to the teacher's width,
/// used only when the two tap widths differ.
class FeatureAdapter {
 public:
  FeatureAdapter(int in_channels, int out_channels, std::uint64_t seed);

  FeatureMap forward(const FeatureMap& x) const;
  /// Accumulates parameter gradients, returns the input gradient.
  Grid backward(const FeatureMap& x, const Grid& grad_out, nn::Gradients& param_grads) const;

  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

 private:
  nn::ParameterSet params_;
  nn::Conv2d proj_;
};

/// On-disk checkpoint: a JSON header listing every tensor and a sidecar
/// blob of little-endian float32 values in header order.
struct Checkpoint {
  nlohmann::json config;
  ParamSnapshot params;
};

/// Blob path used for a given header path (`x.json` -> `x.bin`).
std::filesystem::path checkpoint_blob_path(const std::filesystem::path& header);
void save_checkpoint(const std::filesystem::path& header, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& header);

// Conversions between the NCHW float tensors used inside networks and the
// (H, W, C) double grids used by losses and metrics.
nn::Tensor to_tensor(std::span<const ImageTensor> batch);
nn::Tensor to_tensor(std::span<const ProbabilityMap> batch);
nn::Tensor to_tensor(std::span<const Grid> batch);
Grid image_grid(const nn::Tensor& t, int i);

}  // namespace dakd
