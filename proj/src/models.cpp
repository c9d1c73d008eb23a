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

#include "dakd/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace dakd {

namespace {

constexpr float kReluSlope = 0.0f;
constexpr float kDiscSlope = 0.2f;
constexpr double kReluGain = 1.4142135623730951;  // sqrt(2)

// Network seeds go through a mixer so that neighbouring seeds give
// unrelated initialisations.
std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

template <typename GridLike>
nn::Tensor grids_to_tensor(std::span<const GridLike> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const Grid& first = batch.front();
  nn::Tensor t(static_cast<int>(batch.size()), first.channels(), first.height(), first.width());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Grid& g = batch[i];
    if (!g.same_shape(first)) throw std::invalid_argument("batch entries differ in shape");
    float* dst = t.image(static_cast<int>(i));
    const std::size_t plane = static_cast<std::size_t>(g.height()) * g.width();
    for (std::size_t p = 0; p < plane; ++p) {
      const auto px = g.pixel(p);
      for (int c = 0; c < g.channels(); ++c) dst[c * plane + p] = static_cast<float>(px[c]);
    }
  }
  return t;
}

ParamSnapshot snapshot_of(const nn::ParameterSet& params, int iteration, const std::string& prefix) {
  ParamSnapshot s;
  s.iteration = iteration;
  for (const auto& p : params) s.tensors.push_back({prefix + p.name, p.shape, p.value});
  return s;
}

void load_into(nn::ParameterSet& params, const ParamSnapshot& snapshot, const std::string& prefix) {
  for (auto& p : params) {
    const nn::Parameter* src = snapshot.find(prefix + p.name);
    if (src == nullptr) throw std::runtime_error("checkpoint is missing tensor '" + prefix + p.name + "'");
    if (src->shape != p.shape) {
      throw std::runtime_error("checkpoint tensor '" + prefix + p.name + "' has an incompatible shape");
    }
    p.value = src->value;
  }
}

}  // namespace

const nn::Parameter* ParamSnapshot::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

bool ParamSnapshot::bit_identical(const ParamSnapshot& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = other.tensors[i];
    if (a.name != b.name || a.shape != b.shape || a.value.size() != b.value.size()) return false;
    if (!std::equal(a.value.begin(), a.value.end(), b.value.begin(),
                    [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); })) {
      return false;
    }
  }
  return true;
}

ParamSnapshot ParamSnapshot::with_prefix_stripped(const std::string& prefix) const {
  ParamSnapshot out;
  out.iteration = iteration;
  for (const auto& t : tensors) {
    if (t.name.rfind(prefix, 0) == 0) out.tensors.push_back({t.name.substr(prefix.size()), t.shape, t.value});
  }
  return out;
}

void SegNetConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  if (depth < 2) throw std::invalid_argument("depth must be at least 2 so the tap precedes the main head");
  if (base_width < 1 || feature_tap_width < 1) throw std::invalid_argument("widths must be positive");
  if (input_height < 8 || input_width < 8) throw std::invalid_argument("input size must be at least 8x8");
  if (downsample < 0 || downsample > depth - 1) {
    throw std::invalid_argument("downsample must be in [0, depth - 1]");
  }
}

SegNetConfig SegNetConfig::teacher_preset() {
  SegNetConfig c;
  c.base_width = 32;
  c.depth = 8;
  c.feature_tap_width = 32;
  return c;
}

SegNetConfig SegNetConfig::student_preset() {
  SegNetConfig c;
  c.base_width = 16;
  c.depth = 4;
  c.feature_tap_width = 32;
  return c;
}

void to_json(nlohmann::json& j, const SegNetConfig& c) {
  j = {{"num_classes", c.num_classes},   {"base_width", c.base_width},
       {"depth", c.depth},               {"feature_tap_width", c.feature_tap_width},
       {"input_height", c.input_height}, {"input_width", c.input_width},
       {"downsample", c.downsample},     {"tap_norm", c.tap_norm}};
}

void from_json(const nlohmann::json& j, SegNetConfig& c) {
  c.num_classes = j.at("num_classes").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.feature_tap_width = j.at("feature_tap_width").get<int>();
  c.input_height = j.at("input_height").get<int>();
  c.input_width = j.at("input_width").get<int>();
  c.downsample = j.value("downsample", 2);
  c.tap_norm = j.value("tap_norm", false);
}

SegmentationNet::SegmentationNet(const SegNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  auto rng = seeded_rng(seed, 0x5e9e7);
  int in = 3;
  for (int i = 0; i < cfg_.depth; ++i) {
    const int out = i == tap_index() ? cfg_.feature_tap_width : cfg_.base_width;
    const int stride = i < cfg_.downsample ? 2 : 1;
    blocks_.emplace_back(params_, "block" + std::to_string(i), in, out, 3, stride, 1, rng, kReluGain);
    in = out;
  }
  aux_head_ = nn::Conv2d(params_, "aux_head", cfg_.feature_tap_width, cfg_.num_classes, 1, 1, 0, rng, 1.0);
  main_head_ = nn::Conv2d(params_, "main_head", cfg_.base_width, cfg_.num_classes, 1, 1, 0, rng, 1.0);
}

int SegmentationNet::feature_height() const {
  int h = cfg_.input_height;
  for (const auto& b : blocks_) h = b.output_extent(h);
  return h;
}

int SegmentationNet::feature_width() const {
  int w = cfg_.input_width;
  for (const auto& b : blocks_) w = b.output_extent(w);
  return w;
}

SegNetOutput SegmentationNet::forward(std::span<const ImageTensor> batch, SegNetTrace* trace) const {
  nn::Tensor x = to_tensor(batch);
  if (x.h != cfg_.input_height || x.w != cfg_.input_width) {
    throw std::invalid_argument("input is " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                                ", network expects " + std::to_string(cfg_.input_height) + "x" +
                                std::to_string(cfg_.input_width));
  }
  const int out_h = x.h;
  const int out_w = x.w;
  std::vector<nn::Tensor> acts;
  acts.reserve(blocks_.size());
  std::vector<float> tap_rms;
  const nn::Tensor* current = &x;
  for (const auto& block : blocks_) {
    nn::Tensor y = block.forward(params_, *current);
    nn::leaky_relu(y, kReluSlope);
    if (cfg_.tap_norm && acts.size() == static_cast<std::size_t>(tap_index())) tap_rms = nn::rms_normalize(y);
    acts.push_back(std::move(y));
    current = &acts.back();
  }
  const nn::Tensor& tap = acts[tap_index()];
  const nn::Tensor aux = nn::upsample_bilinear(aux_head_.forward(params_, tap), out_h, out_w);
  const nn::Tensor main = nn::upsample_bilinear(main_head_.forward(params_, acts.back()), out_h, out_w);

  SegNetOutput out;
  for (int i = 0; i < x.n; ++i) {
    out.feature.emplace_back(image_grid(tap, i));
    out.aux_logits.emplace_back(image_grid(aux, i));
    out.main_logits.emplace_back(image_grid(main, i));
  }
  if (trace != nullptr) {
    trace->input = std::move(x);
    trace->blocks = std::move(acts);
    trace->tap_rms = std::move(tap_rms);
  }
  return out;
}

void SegmentationNet::backward(const SegNetTrace& trace, const SegNetGrads& grads,
                               nn::Gradients& param_grads) const {
  const int n = trace.input.n;
  const nn::Tensor& last = trace.blocks.back();
  const nn::Tensor& tap = trace.blocks[tap_index()];

  nn::Tensor grad_last(n, last.c, last.h, last.w);
  if (!grads.main_logits.empty()) {
    const nn::Tensor g = nn::upsample_bilinear_backward(to_tensor(std::span<const Grid>(grads.main_logits)),
                                                        last.h, last.w);
    grad_last = main_head_.backward(params_, last, g, param_grads, true);
  }

  nn::Tensor grad_tap_extra(n, tap.c, tap.h, tap.w);
  if (!grads.aux_logits.empty()) {
    const nn::Tensor g =
        nn::upsample_bilinear_backward(to_tensor(std::span<const Grid>(grads.aux_logits)), tap.h, tap.w);
    grad_tap_extra = aux_head_.backward(params_, tap, g, param_grads, true);
  }
  if (!grads.feature.empty()) {
    const nn::Tensor g = to_tensor(std::span<const Grid>(grads.feature));
    for (std::size_t i = 0; i < g.data.size(); ++i) grad_tap_extra.data[i] += g.data[i];
  }

  nn::Tensor grad = std::move(grad_last);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    if (i == tap_index()) {
      for (std::size_t k = 0; k < grad.data.size(); ++k) grad.data[k] += grad_tap_extra.data[k];
      if (cfg_.tap_norm) nn::rms_normalize_backward(trace.blocks[i], trace.tap_rms, grad);
    }
    // Normalization keeps signs, so the ReLU mask is read off the stored output.
    nn::leaky_relu_backward(trace.blocks[i], grad, kReluSlope);
    const nn::Tensor& input = i == 0 ? trace.input : trace.blocks[i - 1];
    grad = blocks_[i].backward(params_, input, grad, param_grads, i > 0);
  }
}

ParamSnapshot SegmentationNet::snapshot(int iteration, const std::string& prefix) const {
  return snapshot_of(params_, iteration, prefix);
}

void SegmentationNet::load(const ParamSnapshot& snapshot, const std::string& prefix) {
  load_into(params_, snapshot, prefix);
}

FrozenSegNet freeze(SegmentationNet net) { return FrozenSegNet(std::move(net)); }

void DiscriminatorConfig::validate() const {
  if (in_channels < 2) throw std::invalid_argument("discriminator in_channels must be at least 2");
  if (width < 1) throw std::invalid_argument("discriminator width must be positive");
  if (depth < 2) throw std::invalid_argument("discriminator depth must be at least 2");
}

int DiscriminatorConfig::output_extent(int input_extent) const {
  int e = input_extent;
  for (int i = 0; i < depth; ++i) e = (e + 2 - 3) / 2 + 1;
  return e;
}

void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"in_channels", c.in_channels}, {"width", c.width}, {"depth", c.depth}};
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  c.in_channels = j.at("in_channels").get<int>();
  c.width = j.at("width").get<int>();
  c.depth = j.at("depth").get<int>();
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  auto rng = seeded_rng(seed, 0xd15c);
  int in = cfg_.in_channels;
  for (int i = 0; i < cfg_.depth; ++i) {
    const bool last = i == cfg_.depth - 1;
    const int out = last ? 1 : cfg_.width << i;
    layers_.emplace_back(params_, "conv" + std::to_string(i), in, out, 3, 2, 1, rng, last ? 1.0 : kReluGain);
    in = out;
  }
}

std::vector<Grid> Discriminator::forward(std::span<const ProbabilityMap> batch, DiscTrace* trace) const {
  nn::Tensor x = to_tensor(batch);
  if (x.c != cfg_.in_channels) {
    throw std::invalid_argument("discriminator expects " + std::to_string(cfg_.in_channels) +
                                " input channels, got " + std::to_string(x.c));
  }
  std::vector<nn::Tensor> acts;
  acts.reserve(layers_.size());
  const nn::Tensor* current = &x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    nn::Tensor y = layers_[i].forward(params_, *current);
    if (i + 1 < layers_.size()) {
      nn::leaky_relu(y, kDiscSlope);
    } else {
      nn::sigmoid(y);
    }
    acts.push_back(std::move(y));
    current = &acts.back();
  }
  std::vector<Grid> out;
  for (int i = 0; i < x.n; ++i) out.push_back(image_grid(acts.back(), i));
  if (trace != nullptr) {
    trace->input = std::move(x);
    trace->layers = std::move(acts);
  }
  return out;
}

std::vector<Grid> Discriminator::backward(const DiscTrace& trace, std::span<const Grid> grad_out,
                                          nn::Gradients& param_grads, bool input_grad) const {
  nn::Tensor grad = to_tensor(grad_out);
  const nn::Tensor& out = trace.layers.back();
  for (std::size_t k = 0; k < grad.data.size(); ++k) grad.data[k] *= out.data[k] * (1.0f - out.data[k]);
  for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
    if (i + 1 < static_cast<int>(layers_.size())) nn::leaky_relu_backward(trace.layers[i], grad, kDiscSlope);
    const nn::Tensor& input = i == 0 ? trace.input : trace.layers[i - 1];
    grad = layers_[i].backward(params_, input, grad, param_grads, input_grad || i > 0);
  }
  std::vector<Grid> result;
  if (!input_grad) return result;
  for (int i = 0; i < grad.n; ++i) result.push_back(image_grid(grad, i));
  return result;
}

ParamSnapshot Discriminator::snapshot(int iteration, const std::string& prefix) const {
  return snapshot_of(params_, iteration, prefix);
}

void Discriminator::load(const ParamSnapshot& snapshot, const std::string& prefix) {
  load_into(params_, snapshot, prefix);
}

FeatureAdapter::FeatureAdapter(int in_channels, int out_channels, std::uint64_t seed) {
  auto rng = seeded_rng(seed, 0xada9);
  proj_ = nn::Conv2d(params_, "proj", in_channels, out_channels, 1, 1, 0, rng, 1.0);
}

FeatureMap FeatureAdapter::forward(const FeatureMap& x) const {
  const nn::Tensor t = grids_to_tensor(std::span<const FeatureMap>(&x, 1));
  return FeatureMap(image_grid(proj_.forward(params_, t), 0));
}

Grid FeatureAdapter::backward(const FeatureMap& x, const Grid& grad_out, nn::Gradients& param_grads) const {
  const nn::Tensor t = grids_to_tensor(std::span<const FeatureMap>(&x, 1));
  const nn::Tensor g = to_tensor(std::span<const Grid>(&grad_out, 1));
  return image_grid(proj_.backward(params_, t, g, param_grads, true), 0);
}

nn::Tensor to_tensor(std::span<const ImageTensor> batch) { return grids_to_tensor(batch); }
nn::Tensor to_tensor(std::span<const ProbabilityMap> batch) { return grids_to_tensor(batch); }
nn::Tensor to_tensor(std::span<const Grid> batch) { return grids_to_tensor(batch); }

Grid image_grid(const nn::Tensor& t, int i) {
  Grid g(t.h, t.w, t.c);
  const float* src = t.image(i);
  const std::size_t plane = static_cast<std::size_t>(t.h) * t.w;
  for (std::size_t p = 0; p < plane; ++p) {
    auto px = g.pixel(p);
    for (int c = 0; c < t.c; ++c) px[c] = src[c * plane + p];
  }
  return g;
}

}  // namespace dakd
