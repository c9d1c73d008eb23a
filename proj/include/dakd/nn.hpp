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
#include <random>
#include <string>
#include <vector>

// Minimal float32 convolutional building blocks with explicit backward
// passes. Layers are stateless with respect to activations: forward results
// are kept by the caller and handed back to backward.

namespace dakd::nn {

/// NCHW float tensor.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, float fill = 0.0f);

  std::size_t image_size() const { return static_cast<std::size_t>(c) * h * w; }
  float* image(int i) { return data.data() + i * image_size(); }
  const float* image(int i) const { return data.data() + i * image_size(); }
  float& at(int i, int ch, int y, int x) { return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }
  float at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
};

/// Ordered, named parameter storage owned by a network.
class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<int> shape, std::vector<float> value);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  /// Total number of scalars.
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

/// Gradient buffers aligned with a ParameterSet.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet& params);

  std::vector<float>& operator[](std::size_t i) { return grads_[i]; }
  const std::vector<float>& operator[](std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }
  void zero();

 private:
  std::vector<std::vector<float>> grads_;
};

class Conv2d {
 public:
  Conv2d() = default;
  /// Registers weight [out, in, k, k] and bias [out]; weights are drawn
  /// from N(0, gain^2 / fan_in).
  Conv2d(ParameterSet& params, const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         int padding, std::mt19937_64& rng, double gain);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int output_extent(int input_extent) const { return (input_extent + 2 * pad_ - k_) / stride_ + 1; }

  Tensor forward(const ParameterSet& params, const Tensor& x) const;
  /// Accumulates parameter gradients; returns the input gradient when
  /// `input_grad` is set, otherwise an empty tensor.
  Tensor backward(const ParameterSet& params, const Tensor& x, const Tensor& grad_out, Gradients& grads,
                  bool input_grad) const;

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }
  void im2col(const float* image, int h, int w, int oh, int ow, float* col) const;
  void col2im(const float* col, int h, int w, int oh, int ow, float* image) const;

  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
  int stride_ = 1;
  int pad_ = 0;
  std::size_t weight_ = 0;
  std::size_t bias_ = 0;
};

/// Leaky ReLU (slope 0 gives a plain ReLU), in place.
void leaky_relu(Tensor& x, float slope);
/// Backward from the activation output.
void leaky_relu_backward(const Tensor& y, Tensor& grad, float slope);

void sigmoid(Tensor& x);

/// Divides every pixel's channel vector by sqrt(mean square + eps), in place.
/// A unit eps keeps the map smooth where a pixel's activations all vanish.
/// Returns the per-pixel divisors (n*h*w) for the backward pass.
std::vector<float> rms_normalize(Tensor& x, float eps = 1.0f);
/// Backward from the normalized output `y` and the divisors.
void rms_normalize_backward(const Tensor& y, const std::vector<float>& rms, Tensor& grad);

/// Corner-aligned bilinear resize of every channel.
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);
Tensor upsample_bilinear_backward(const Tensor& grad_out, int in_h, int in_w);

}  // namespace dakd::nn
