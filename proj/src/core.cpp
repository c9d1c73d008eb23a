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

#include "dakd/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dakd {

namespace {

void require_positive_shape(int h, int w, int c) {
  if (h < 1 || w < 1 || c < 1) {
    throw std::invalid_argument("grid dimensions must be positive, got " + std::to_string(h) + "x" +
                                std::to_string(w) + "x" + std::to_string(c));
  }
}

struct AxisSample {
  int lo;
  int hi;
  double frac;
};

// Corner-aligned source coordinate for output index i.
AxisSample axis_sample(int i, int in_size, int out_size) {
  if (out_size == 1 || in_size == 1) return {0, 0, 0.0};
  const double src = static_cast<double>(i) * (in_size - 1) / (out_size - 1);
  int lo = static_cast<int>(std::floor(src));
  lo = std::clamp(lo, 0, in_size - 1);
  const int hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - lo};
}

}  // namespace

Grid::Grid(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  require_positive_shape(height, width, channels);
  values_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Grid::Grid(int height, int width, int channels, std::vector<double> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  require_positive_shape(height, width, channels);
  if (values_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw std::invalid_argument("grid value count does not match its shape");
  }
}

bool Grid::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

ImageTensor::ImageTensor(Grid grid) : Grid(std::move(grid)) {
  if (channels() != 3) throw std::invalid_argument("image must have 3 channels");
  if (height() < 8 || width() < 8) throw std::invalid_argument("image must be at least 8x8");
  for (double v : values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw std::invalid_argument("image values must lie in [0, 1]");
    }
  }
}

LogitMap::LogitMap(Grid grid) : Grid(std::move(grid)) {
  if (!all_finite()) throw std::domain_error("logit map contains non-finite values");
}

ProbabilityMap::ProbabilityMap(Grid grid) : Grid(std::move(grid)) {
  for (std::size_t p = 0; p < pixels(); ++p) {
    double sum = 0.0;
    for (double v : pixel(p)) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("probability outside [0, 1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-5) {
      throw std::domain_error("probability pixel " + std::to_string(p) + " sums to " + std::to_string(sum));
    }
  }
}

ProbabilityMap ProbabilityMap::trusted(Grid grid) { return ProbabilityMap(std::move(grid), TrustedTag{}); }

FeatureMap::FeatureMap(Grid grid) : Grid(std::move(grid)) {
  if (!all_finite()) throw std::domain_error("feature map contains non-finite values");
}

LabelMap::LabelMap(int height, int width, int num_classes, std::vector<std::uint8_t> values)
    : height_(height), width_(width), num_classes_(num_classes), values_(std::move(values)) {
  if (height < 1 || width < 1) throw std::invalid_argument("label map dimensions must be positive");
  if (num_classes < 2 || num_classes >= kIgnoreLabel) {
    throw std::invalid_argument("num_classes must be in [2, 254]");
  }
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("label value count does not match its shape");
  }
  for (std::size_t p = 0; p < values_.size(); ++p) {
    if (values_[p] != kIgnoreLabel && values_[p] >= num_classes) {
      throw std::invalid_argument("label " + std::to_string(values_[p]) + " at pixel " + std::to_string(p) +
                                  " is not a valid class");
    }
  }
}

LabelMap::LabelMap(int height, int width, int num_classes, std::uint8_t fill)
    : LabelMap(height, width, num_classes,
               std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0), fill)) {}

void LabelMap::set(int y, int x, std::uint8_t v) {
  if (v != kIgnoreLabel && v >= num_classes_) throw std::invalid_argument("label is not a valid class");
  values_[static_cast<std::size_t>(y) * width_ + x] = v;
}

std::string to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::kSource;
  if (s == "target") return Domain::kTarget;
  throw std::invalid_argument("unknown domain '" + s + "'");
}

void DomainBatch::validate() const {
  if (images.empty()) throw std::invalid_argument("empty batch");
  for (const auto& img : images) {
    if (!img.same_shape(images.front())) throw std::invalid_argument("batch images differ in shape");
  }
  if (!labels) return;
  if (labels->size() != images.size()) throw std::invalid_argument("label count does not match image count");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& l = (*labels)[i];
    if (l.height() != images[i].height() || l.width() != images[i].width()) {
      throw std::invalid_argument("label shape does not match image " + std::to_string(i));
    }
  }
}

std::string to_string(Paradigm p) {
  switch (p) {
    case Paradigm::kA: return "a";
    case Paradigm::kB: return "b";
    case Paradigm::kC: return "c";
    case Paradigm::kD: return "d";
  }
  return "?";
}

Paradigm paradigm_from_string(const std::string& s) {
  if (s == "a" || s == "A") return Paradigm::kA;
  if (s == "b" || s == "B") return Paradigm::kB;
  if (s == "c" || s == "C") return Paradigm::kC;
  if (s == "d" || s == "D") return Paradigm::kD;
  throw std::invalid_argument("unknown paradigm '" + s + "' (expected a, b, c or d)");
}

std::string to_string(KlDirection d) {
  return d == KlDirection::kStudentFirst ? "student_first" : "teacher_first";
}

KlDirection kl_direction_from_string(const std::string& s) {
  if (s == "student_first") return KlDirection::kStudentFirst;
  if (s == "teacher_first") return KlDirection::kTeacherFirst;
  throw std::invalid_argument("unknown kl_direction '" + s + "'");
}

std::string to_string(Reduction r) { return r == Reduction::kMean ? "mean" : "sum"; }

Reduction reduction_from_string(const std::string& s) {
  if (s == "mean") return Reduction::kMean;
  if (s == "sum") return Reduction::kSum;
  throw std::invalid_argument("unknown reduction '" + s + "'");
}

void DistillConfig::validate() const {
  const std::pair<const char*, double> weights[] = {{"lambda_kl_out", lambda_kl_out},
                                                    {"lambda_kl_feat", lambda_kl_feat},
                                                    {"lambda_mse", lambda_mse},
                                                    {"lambda_pseudo", lambda_pseudo},
                                                    {"lambda_target", lambda_target}};
  for (const auto& [name, v] : weights) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument(std::string(name) + " must be finite and non-negative");
    }
  }
}

ProbabilityMap softmax(const LogitMap& logits) {
  if (!logits.all_finite()) throw std::domain_error("softmax input contains non-finite values");
  Grid out(logits.height(), logits.width(), logits.channels());
  for (std::size_t p = 0; p < logits.pixels(); ++p) {
    const auto z = logits.pixel(p);
    auto q = out.pixel(p);
    const double peak = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      q[c] = std::exp(z[c] - peak);
      sum += q[c];
    }
    for (double& v : q) v /= sum;
  }
  return ProbabilityMap::trusted(std::move(out));
}

Grid softmax_backward(const ProbabilityMap& probs, const Grid& grad_probs) {
  if (!probs.same_shape(grad_probs)) throw std::invalid_argument("softmax_backward shape mismatch");
  Grid out(probs.height(), probs.width(), probs.channels());
  for (std::size_t p = 0; p < probs.pixels(); ++p) {
    const auto q = probs.pixel(p);
    const auto g = grad_probs.pixel(p);
    double dot = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) dot += q[c] * g[c];
    auto o = out.pixel(p);
    for (std::size_t c = 0; c < q.size(); ++c) o[c] = q[c] * (g[c] - dot);
  }
  return out;
}

LabelMap pseudo_labels(const ProbabilityMap& teacher_probs) {
  std::vector<std::uint8_t> labels(teacher_probs.pixels());
  for (std::size_t p = 0; p < teacher_probs.pixels(); ++p) {
    const auto q = teacher_probs.pixel(p);
    // max_element returns the first maximum, so ties resolve to the lowest index.
    labels[p] = static_cast<std::uint8_t>(std::max_element(q.begin(), q.end()) - q.begin());
  }
  return LabelMap(teacher_probs.height(), teacher_probs.width(), teacher_probs.channels(), std::move(labels));
}

Grid bilinear_resize(const Grid& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("bilinear_resize target dimensions must be positive");
  }
  if (out_h == input.height() && out_w == input.width()) return input;
  const int channels = input.channels();
  Grid out(out_h, out_w, channels);
  for (int y = 0; y < out_h; ++y) {
    const AxisSample sy = axis_sample(y, input.height(), out_h);
    for (int x = 0; x < out_w; ++x) {
      const AxisSample sx = axis_sample(x, input.width(), out_w);
      for (int c = 0; c < channels; ++c) {
        // std::lerp is exact for equal endpoints, so constant maps stay constant.
        const double top = std::lerp(input.at(sy.lo, sx.lo, c), input.at(sy.lo, sx.hi, c), sx.frac);
        const double bottom = std::lerp(input.at(sy.hi, sx.lo, c), input.at(sy.hi, sx.hi, c), sx.frac);
        out.at(y, x, c) = std::lerp(top, bottom, sy.frac);
      }
    }
  }
  return out;
}

FeatureMap bilinear_resize(const FeatureMap& input, int out_h, int out_w) {
  return FeatureMap(bilinear_resize(static_cast<const Grid&>(input), out_h, out_w));
}

ProbabilityMap bilinear_resize(const ProbabilityMap& input, int out_h, int out_w) {
  if (out_h == input.height() && out_w == input.width()) return input;
  Grid out = bilinear_resize(static_cast<const Grid&>(input), out_h, out_w);
  for (std::size_t p = 0; p < out.pixels(); ++p) {
    auto q = out.pixel(p);
    double sum = 0.0;
    for (double v : q) sum += v;
    for (double& v : q) v /= sum;
  }
  return ProbabilityMap::trusted(std::move(out));
}

Grid bilinear_resize_backward(const Grid& grad_out, int in_h, int in_w) {
  if (in_h < 1 || in_w < 1) throw std::invalid_argument("bilinear_resize_backward dimensions must be positive");
  if (grad_out.height() == in_h && grad_out.width() == in_w) return grad_out;
  const int channels = grad_out.channels();
  Grid grad_in(in_h, in_w, channels);
  for (int y = 0; y < grad_out.height(); ++y) {
    const AxisSample sy = axis_sample(y, in_h, grad_out.height());
    for (int x = 0; x < grad_out.width(); ++x) {
      const AxisSample sx = axis_sample(x, in_w, grad_out.width());
      for (int c = 0; c < channels; ++c) {
        const double g = grad_out.at(y, x, c);
        grad_in.at(sy.lo, sx.lo, c) += g * (1.0 - sy.frac) * (1.0 - sx.frac);
        grad_in.at(sy.lo, sx.hi, c) += g * (1.0 - sy.frac) * sx.frac;
        grad_in.at(sy.hi, sx.lo, c) += g * sy.frac * (1.0 - sx.frac);
        grad_in.at(sy.hi, sx.hi, c) += g * sy.frac * sx.frac;
      }
    }
  }
  return grad_in;
}

}  // namespace dakd
