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

#include "dakd/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dakd::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXf>;

struct Tap {
  int lo;
  int hi;
  float frac;
};

std::vector<Tap> corner_aligned_taps(int in_size, int out_size) {
  std::vector<Tap> taps(out_size);
  for (int i = 0; i < out_size; ++i) {
    if (out_size == 1 || in_size == 1) {
      taps[i] = {0, 0, 0.0f};
      continue;
    }
    const double src = static_cast<double>(i) * (in_size - 1) / (out_size - 1);
    const int lo = std::clamp(static_cast<int>(std::floor(src)), 0, in_size - 1);
    taps[i] = {lo, std::min(lo + 1, in_size - 1), static_cast<float>(src - lo)};
  }
  return taps;
}

}  // namespace

Tensor::Tensor(int n_, int c_, int h_, int w_, float fill)
    : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

std::size_t ParameterSet::add(std::string name, std::vector<int> shape, std::vector<float> value) {
  const auto expected = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                        [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  if (expected != value.size()) throw std::invalid_argument("parameter " + name + " has inconsistent shape");
  params_.push_back({std::move(name), std::move(shape), std::move(value)});
  return params_.size() - 1;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

Gradients::Gradients(const ParameterSet& params) {
  grads_.reserve(params.size());
  for (const auto& p : params) grads_.emplace_back(p.value.size(), 0.0f);
}

void Gradients::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0f);
}

Conv2d::Conv2d(ParameterSet& params, const std::string& name, int in_channels, int out_channels, int kernel,
               int stride, int padding, std::mt19937_64& rng, double gain)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1 || padding < 0) {
    throw std::invalid_argument("invalid convolution geometry for " + name);
  }
  const int fan_in = in_channels * kernel * kernel;
  std::normal_distribution<double> normal(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  std::vector<float> w(static_cast<std::size_t>(out_channels) * fan_in);
  for (auto& v : w) v = static_cast<float>(normal(rng));
  weight_ = params.add(name + ".weight", {out_channels, in_channels, kernel, kernel}, std::move(w));
  bias_ = params.add(name + ".bias", {out_channels}, std::vector<float>(out_channels, 0.0f));
}

void Conv2d::im2col(const float* image, int h, int w, int oh, int ow, float* col) const {
  for (int ci = 0; ci < in_; ++ci) {
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        float* row = col + ((static_cast<std::size_t>(ci) * k_ + ky) * k_ + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          float* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          const float* src = image + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const float* col, int h, int w, int oh, int ow, float* image) const {
  for (int ci = 0; ci < in_; ++ci) {
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        const float* row = col + ((static_cast<std::size_t>(ci) * k_ + ky) * k_ + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          const float* src = row + static_cast<std::size_t>(oy) * ow;
          float* dst = image + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const ParameterSet& params, const Tensor& x) const {
  if (x.c != in_) throw std::invalid_argument("conv input has " + std::to_string(x.c) + " channels, expected " +
                                              std::to_string(in_));
  const int oh = output_extent(x.h);
  const int ow = output_extent(x.w);
  const int taps = in_ * k_ * k_;
  const int positions = oh * ow;
  Tensor y(x.n, out_, oh, ow);
  ConstMatrixMap weight(params[weight_].value.data(), out_, taps);
  const Eigen::Map<const Eigen::VectorXf> bias(params[bias_].value.data(), out_);
  std::vector<float> col(pointwise() ? 0 : static_cast<std::size_t>(taps) * positions);
  for (int i = 0; i < x.n; ++i) {
    const float* input = x.image(i);
    if (!pointwise()) {
      im2col(input, x.h, x.w, oh, ow, col.data());
      input = col.data();
    }
    MatrixMap out(y.image(i), out_, positions);
    out.noalias() = weight * ConstMatrixMap(input, taps, positions);
    out.colwise() += bias;
  }
  return y;
}

Tensor Conv2d::backward(const ParameterSet& params, const Tensor& x, const Tensor& grad_out, Gradients& grads,
                        bool input_grad) const {
  const int oh = grad_out.h;
  const int ow = grad_out.w;
  const int taps = in_ * k_ * k_;
  const int positions = oh * ow;
  ConstMatrixMap weight(params[weight_].value.data(), out_, taps);
  MatrixMap grad_weight(grads[weight_].data(), out_, taps);
  Eigen::Map<Eigen::VectorXf> grad_bias(grads[bias_].data(), out_);

  Tensor grad_in;
  if (input_grad) grad_in = Tensor(x.n, x.c, x.h, x.w);
  std::vector<float> col(pointwise() ? 0 : static_cast<std::size_t>(taps) * positions);
  std::vector<float> grad_col(pointwise() || !input_grad ? 0 : static_cast<std::size_t>(taps) * positions);
  for (int i = 0; i < x.n; ++i) {
    ConstMatrixMap g(grad_out.image(i), out_, positions);
    const float* input = x.image(i);
    if (!pointwise()) {
      im2col(input, x.h, x.w, oh, ow, col.data());
      input = col.data();
    }
    grad_weight.noalias() += g * ConstMatrixMap(input, taps, positions).transpose();
    grad_bias += g.rowwise().sum();
    if (!input_grad) continue;
    if (pointwise()) {
      MatrixMap(grad_in.image(i), taps, positions).noalias() = weight.transpose() * g;
    } else {
      MatrixMap(grad_col.data(), taps, positions).noalias() = weight.transpose() * g;
      col2im(grad_col.data(), x.h, x.w, oh, ow, grad_in.image(i));
    }
  }
  return grad_in;
}

void leaky_relu(Tensor& x, float slope) {
  for (auto& v : x.data) v = v > 0.0f ? v : v * slope;
}

void leaky_relu_backward(const Tensor& y, Tensor& grad, float slope) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(y.data[i] > 0.0f)) grad.data[i] *= slope;
  }
}

std::vector<float> rms_normalize(Tensor& x, float eps) {
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  std::vector<float> rms(static_cast<std::size_t>(x.n) * plane);
  for (int i = 0; i < x.n; ++i) {
    float* img = x.image(i);
    for (std::size_t p = 0; p < plane; ++p) {
      double sq = 0.0;
      for (int c = 0; c < x.c; ++c) sq += static_cast<double>(img[c * plane + p]) * img[c * plane + p];
      const float r = static_cast<float>(std::sqrt(sq / x.c + eps));
      rms[i * plane + p] = r;
      for (int c = 0; c < x.c; ++c) img[c * plane + p] /= r;
    }
  }
  return rms;
}

void rms_normalize_backward(const Tensor& y, const std::vector<float>& rms, Tensor& grad) {
  // y = x / r with r^2 = mean(x^2) + eps, so dx = (dy - y * mean(dy * y)) / r.
  const std::size_t plane = static_cast<std::size_t>(y.h) * y.w;
  for (int i = 0; i < y.n; ++i) {
    const float* yi = y.image(i);
    float* gi = grad.image(i);
    for (std::size_t p = 0; p < plane; ++p) {
      double dot = 0.0;
      for (int c = 0; c < y.c; ++c) dot += static_cast<double>(gi[c * plane + p]) * yi[c * plane + p];
      const double m = dot / y.c;
      const double r = rms[i * plane + p];
      for (int c = 0; c < y.c; ++c) {
        gi[c * plane + p] = static_cast<float>((gi[c * plane + p] - yi[c * plane + p] * m) / r);
      }
    }
  }
}

void sigmoid(Tensor& x) {
  for (auto& v : x.data) v = 1.0f / (1.0f + std::exp(-v));
}

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  if (out_h == x.h && out_w == x.w) return x;
  const auto ty = corner_aligned_taps(x.h, out_h);
  const auto tx = corner_aligned_taps(x.w, out_w);
  Tensor y(x.n, x.c, out_h, out_w);
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const float* src = x.image(i) + static_cast<std::size_t>(ch) * x.h * x.w;
      float* dst = y.image(i) + static_cast<std::size_t>(ch) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const float* r0 = src + static_cast<std::size_t>(ty[oy].lo) * x.w;
        const float* r1 = src + static_cast<std::size_t>(ty[oy].hi) * x.w;
        const float fy = ty[oy].frac;
        for (int ox = 0; ox < out_w; ++ox) {
          const Tap& t = tx[ox];
          const float top = r0[t.lo] * (1.0f - t.frac) + r0[t.hi] * t.frac;
          const float bottom = r1[t.lo] * (1.0f - t.frac) + r1[t.hi] * t.frac;
          dst[static_cast<std::size_t>(oy) * out_w + ox] = top * (1.0f - fy) + bottom * fy;
        }
      }
    }
  }
  return y;
}

Tensor upsample_bilinear_backward(const Tensor& grad_out, int in_h, int in_w) {
  if (grad_out.h == in_h && grad_out.w == in_w) return grad_out;
  const auto ty = corner_aligned_taps(in_h, grad_out.h);
  const auto tx = corner_aligned_taps(in_w, grad_out.w);
  Tensor grad_in(grad_out.n, grad_out.c, in_h, in_w);
  for (int i = 0; i < grad_out.n; ++i) {
    for (int ch = 0; ch < grad_out.c; ++ch) {
      const float* src = grad_out.image(i) + static_cast<std::size_t>(ch) * grad_out.h * grad_out.w;
      float* dst = grad_in.image(i) + static_cast<std::size_t>(ch) * in_h * in_w;
      for (int oy = 0; oy < grad_out.h; ++oy) {
        float* r0 = dst + static_cast<std::size_t>(ty[oy].lo) * in_w;
        float* r1 = dst + static_cast<std::size_t>(ty[oy].hi) * in_w;
        const float fy = ty[oy].frac;
        for (int ox = 0; ox < grad_out.w; ++ox) {
          const Tap& t = tx[ox];
          const float g = src[static_cast<std::size_t>(oy) * grad_out.w + ox];
          r0[t.lo] += g * (1.0f - fy) * (1.0f - t.frac);
          r0[t.hi] += g * (1.0f - fy) * t.frac;
          r1[t.lo] += g * fy * (1.0f - t.frac);
          r1[t.hi] += g * fy * t.frac;
        }
      }
    }
  }
  return grad_in;
}

}  // namespace dakd::nn
