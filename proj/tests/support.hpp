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

// Shared helpers for the unit tests: random inputs, a central-difference
// gradient oracle and a small on-disk ShapeScenes fixture.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dakd/core.hpp"
#include "dakd/data.hpp"
#include "dakd/models.hpp"
#include "dakd/train.hpp"

namespace dakd::test {

inline Grid random_grid(std::mt19937_64& rng, int h, int w, int c, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Grid g(h, w, c);
  for (double& v : g.values()) v = u(rng);
  return g;
}

inline LogitMap random_logits(std::mt19937_64& rng, int h, int w, int c) {
  return LogitMap(random_grid(rng, h, w, c));
}

inline ProbabilityMap random_probs(std::mt19937_64& rng, int h, int w, int c) {
  return softmax(random_logits(rng, h, w, c));
}

inline LabelMap random_labels(std::mt19937_64& rng, int h, int w, int c, double ignore_rate = 0.0) {
  std::uniform_int_distribution<int> cls(0, c - 1);
  std::bernoulli_distribution ignore(ignore_rate);
  std::vector<std::uint8_t> v(static_cast<std::size_t>(h) * w);
  for (auto& x : v) x = ignore(rng) ? kIgnoreLabel : static_cast<std::uint8_t>(cls(rng));
  return LabelMap(h, w, c, std::move(v));
}

/// Central differences of a scalar function of a grid.
inline Grid numeric_gradient(const std::function<double(const Grid&)>& f, const Grid& x, double h = 1e-5) {
  Grid g(x.height(), x.width(), x.channels());
  Grid probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.values()[i];
    probe.values()[i] = v + h;
    const double up = f(probe);
    probe.values()[i] = v - h;
    const double down = f(probe);
    probe.values()[i] = v;
    g.values()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), or the absolute difference norm when both
/// are tiny.
inline double relative_error(const Grid& a, const Grid& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
    na += a.values()[i] * a.values()[i];
    nb += b.values()[i] * b.values()[i];
  }
  const double scale = std::max(std::sqrt(std::max(na, nb)), 1e-8);
  return std::sqrt(diff) / scale;
}

/// A temporary directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("dakd_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// 32x32 scenes, few samples per split.
inline SceneSpec small_scene() {
  SceneSpec s;
  s.image_height = 32;
  s.image_width = 32;
  s.seed = 11;
  return s;
}

inline SplitCounts small_counts() { return {12, 6, 12, 6}; }

inline SegNetConfig small_net(int depth = 3, int width = 8) {
  SegNetConfig c;
  c.base_width = width;
  c.depth = depth;
  c.feature_tap_width = 8;
  c.input_height = 32;
  c.input_width = 32;
  return c;
}

inline DiscriminatorConfig small_disc() {
  DiscriminatorConfig d;
  d.width = 8;
  d.depth = 3;
  return d;
}

/// Writes the small dataset once per process and returns its root.
inline const std::filesystem::path& small_dataset_root() {
  static TempDir dir("data");
  static const bool written = [] {
    write_dataset(small_scene(), DomainShiftSpec::source_default(), DomainShiftSpec::target_default(),
                  small_counts(), dir.path());
    return true;
  }();
  (void)written;
  return dir.path();
}

inline const TwoDomainData& small_data() {
  static const TwoDomainData data = TwoDomainData::load(small_dataset_root());
  return data;
}

inline TrainPlan small_plan(int iters, std::uint64_t seed = 3) {
  TrainPlan p;
  p.max_iters = iters;
  p.seed = seed;
  p.gen_optim.base_lr = 2.5e-3;
  p.gen_optim.max_iters = iters;
  p.disc_optim.max_iters = iters;
  return p;
}

}  // namespace dakd::test
