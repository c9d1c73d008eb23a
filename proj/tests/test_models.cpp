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

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "dakd/models.hpp"
#include "dakd/nn.hpp"
#include "support.hpp"

using namespace dakd;

namespace {

std::vector<ImageTensor> random_images(std::mt19937_64& rng, int n, int h, int w) {
  std::vector<ImageTensor> out;
  for (int i = 0; i < n; ++i) out.emplace_back(test::random_grid(rng, h, w, 3, 0.0, 1.0));
  return out;
}

double dot(const Grid& a, const Grid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

// Conv arithmetic for a 3x3, stride 2, padding 1 layer.
int conv_extent(int n) { return static_cast<int>(std::floor((n + 2.0 * 1 - 3) / 2.0)) + 1; }

// ||numeric - analytic|| / ||analytic|| over a strided subset of parameter
// entries. Float central differences occasionally straddle a ReLU kink, so
// the comparison is made on the whole vector rather than per entry.
template <typename LossFn>
double param_gradient_error(nn::ParameterSet& params, const nn::Gradients& analytic, LossFn loss,
                            std::size_t stride) {
  double diff = 0.0, norm = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].value.size(); k += stride) {
      float& w = params[p].value[k];
      const float w0 = w;
      const float h = 1e-3f;
      w = w0 + h;
      const double up = loss();
      w = w0 - h;
      const double down = loss();
      w = w0;
      const double num = (up - down) / (2.0 * h);
      const double an = analytic[p][k];
      diff += (num - an) * (num - an);
      norm += an * an;
    }
  }
  return std::sqrt(diff / norm);
}

template <typename T>
concept exposes_parameters = requires(T& net, ParamSnapshot s) {
  net.parameters();
  net.load(s);
};

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("presets: capacity gap, equal tap width and exact parameter counts") {
    const auto t = SegNetConfig::teacher_preset();
    const auto s = SegNetConfig::student_preset();
    CHECK(t.feature_tap_width == s.feature_tap_width);
    CHECK(t.num_classes == 6);
    CHECK(t.input_height == 64);
    const SegmentationNet teacher(t, 1);
    const SegmentationNet student(s, 1);
    CHECK(teacher.parameter_count() > student.parameter_count());
    // 3x3 convs plus 1x1 heads, all with biases.
    const auto conv = [](int in, int out, int k) { return in * out * k * k + out; };
    const std::size_t student_ref =
        conv(3, 16, 3) + conv(16, 16, 3) + conv(16, 32, 3) + conv(32, 16, 3) + conv(32, 6, 1) + conv(16, 6, 1);
    CHECK(student.parameter_count() == student_ref);
    std::size_t teacher_ref = conv(3, 32, 3);
    for (int i = 1; i < 8; ++i) teacher_ref += conv(32, 32, 3);
    teacher_ref += conv(32, 6, 1) + conv(32, 6, 1);
    CHECK(teacher.parameter_count() == teacher_ref);
  }

  TEST_CASE("invalid configs are rejected") {
    auto c = SegNetConfig::student_preset();
    c.depth = 1;
    CHECK_THROWS(SegmentationNet(c, 0));
    c = SegNetConfig::student_preset();
    c.num_classes = 1;
    CHECK_THROWS(SegmentationNet(c, 0));
    DiscriminatorConfig d;
    d.depth = 1;
    CHECK_THROWS(Discriminator(d, 0));
  }

  TEST_CASE("same config and seed give identical snapshots; different seeds differ") {
    const auto c = SegNetConfig::student_preset();
    CHECK(SegmentationNet(c, 5).snapshot().bit_identical(SegmentationNet(c, 5).snapshot()));
    CHECK_FALSE(SegmentationNet(c, 5).snapshot().bit_identical(SegmentationNet(c, 6).snapshot()));
    DiscriminatorConfig d;
    CHECK(Discriminator(d, 2).snapshot().bit_identical(Discriminator(d, 2).snapshot()));
  }

  TEST_CASE("forward shape contract on a batch of two 64x64 images") {
    std::mt19937_64 rng(1);
    const auto images = random_images(rng, 2, 64, 64);
    for (const auto& cfg : {SegNetConfig::teacher_preset(), SegNetConfig::student_preset()}) {
      const SegmentationNet net(cfg, 3);
      const auto out = net.forward(images);
      REQUIRE(out.main_logits.size() == 2);
      REQUIRE(out.aux_logits.size() == 2);
      for (int i = 0; i < 2; ++i) {
        CHECK(out.main_logits[i].height() == 64);
        CHECK(out.main_logits[i].width() == 64);
        CHECK(out.main_logits[i].channels() == 6);
        CHECK(out.aux_logits[i].same_shape(out.main_logits[i]));
        CHECK(out.feature[i].channels() == cfg.feature_tap_width);
        CHECK(out.feature[i].height() == net.feature_height());
        // Softmax of both heads must be valid distributions.
        CHECK_NOTHROW(ProbabilityMap(softmax(out.main_logits[i])));
        CHECK_NOTHROW(ProbabilityMap(softmax(out.aux_logits[i])));
      }
    }
  }

  TEST_CASE("forward is deterministic and rejects the wrong input size") {
    std::mt19937_64 rng(2);
    const auto images = random_images(rng, 1, 32, 32);
    const SegmentationNet net(test::small_net(), 4);
    const auto a = net.forward(images);
    const auto b = net.forward(images);
    CHECK(a.main_logits[0] == b.main_logits[0]);
    CHECK(a.feature[0] == b.feature[0]);
    CHECK_THROWS(net.forward(random_images(rng, 1, 40, 32)));
  }

  TEST_CASE("tap normalization bounds the per-pixel mean square") {
    std::mt19937_64 rng(3);
    auto cfg = test::small_net();
    cfg.tap_norm = true;
    const SegmentationNet net(cfg, 5);
    const auto out = net.forward(random_images(rng, 2, 32, 32));
    for (const auto& f : out.feature) {
      for (std::size_t p = 0; p < f.pixels(); ++p) {
        double ms = 0.0;
        for (double v : f.pixel(p)) ms += v * v;
        CHECK(ms / f.channels() < 1.0 + 1e-5);
      }
    }
  }

  TEST_CASE("rms_normalize backward matches finite differences") {
    std::mt19937_64 rng(4);
    std::normal_distribution<float> nd(0.0f, 2.0f);
    nn::Tensor x(2, 5, 3, 3);
    for (float& v : x.data) v = nd(rng);
    nn::Tensor w(2, 5, 3, 3);
    for (float& v : w.data) v = nd(rng);
    const auto loss = [&](const nn::Tensor& in) {
      nn::Tensor y = in;
      nn::rms_normalize(y);
      double s = 0.0;
      for (std::size_t i = 0; i < y.data.size(); ++i) s += static_cast<double>(y.data[i]) * w.data[i];
      return s;
    };
    nn::Tensor y = x;
    const auto rms = nn::rms_normalize(y);
    nn::Tensor g = w;
    nn::rms_normalize_backward(y, rms, g);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      nn::Tensor probe = x;
      probe.data[i] += 1e-2f;
      const double up = loss(probe);
      probe.data[i] -= 2e-2f;
      const double down = loss(probe);
      CHECK(std::abs((up - down) / 2e-2 - g.data[i]) < 2e-3 * (1.0 + std::abs(g.data[i])));
    }
  }

  TEST_CASE("segmentation net parameter gradients match finite differences") {
    std::mt19937_64 rng(5);
    for (bool tap_norm : {false, true}) {
      auto cfg = test::small_net(3, 4);
      cfg.input_height = 16;
      cfg.input_width = 16;
      cfg.feature_tap_width = 5;
      cfg.tap_norm = tap_norm;
      SegmentationNet net(cfg, 6);
      const auto images = random_images(rng, 2, 16, 16);
      SegNetTrace trace;
      const auto out = net.forward(images, &trace);
      SegNetGrads g;
      for (int i = 0; i < 2; ++i) {
        g.main_logits.push_back(test::random_grid(rng, 16, 16, 6));
        g.aux_logits.push_back(test::random_grid(rng, 16, 16, 6));
        const auto& f = out.feature[i];
        g.feature.push_back(test::random_grid(rng, f.height(), f.width(), f.channels()));
      }
      const auto loss = [&] {
        const auto o = net.forward(images);
        double s = 0.0;
        for (int i = 0; i < 2; ++i) {
          s += dot(o.main_logits[i], g.main_logits[i]) + dot(o.aux_logits[i], g.aux_logits[i]) +
               dot(o.feature[i], g.feature[i]);
        }
        return s;
      };
      nn::Gradients grads(net.parameters());
      grads.zero();
      net.backward(trace, g, grads);
      CHECK(param_gradient_error(net.parameters(), grads, loss, 1) < 2e-2);
    }
  }

  TEST_CASE("discriminator output extent follows conv arithmetic") {
    for (int depth : {2, 3, 4, 5}) {
      DiscriminatorConfig d;
      d.depth = depth;
      for (int n : {7, 16, 33, 64}) {
        int ref = n;
        for (int i = 0; i < depth; ++i) ref = conv_extent(ref);
        CHECK(d.output_extent(n) == ref);
        int stride_product = 1 << depth;
        CHECK(ref == (n + stride_product - 1) / stride_product);
      }
    }
    std::mt19937_64 rng(6);
    DiscriminatorConfig d;
    const Discriminator disc(d, 1);
    std::vector<ProbabilityMap> probs = {test::random_probs(rng, 64, 48, 6)};
    const auto out = disc.forward(probs);
    CHECK(out[0].height() == d.output_extent(64));
    CHECK(out[0].width() == d.output_extent(48));
  }

  TEST_CASE("discriminator outputs lie strictly inside (0, 1)") {
    std::mt19937_64 rng(7);
    const Discriminator disc(DiscriminatorConfig{}, 9);
    std::vector<ProbabilityMap> probs;
    for (int i = 0; i < 3; ++i) probs.push_back(test::random_probs(rng, 32, 32, 6));
    for (const auto& f : disc.forward(probs)) {
      for (double v : f.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
  }

  TEST_CASE("discriminator rejects a channel mismatch") {
    std::mt19937_64 rng(8);
    const Discriminator disc(DiscriminatorConfig{}, 9);
    std::vector<ProbabilityMap> probs = {test::random_probs(rng, 16, 16, 5)};
    CHECK_THROWS(disc.forward(probs));
  }

  TEST_CASE("discriminator input gradient matches finite differences") {
    std::mt19937_64 rng(9);
    DiscriminatorConfig d;
    d.width = 4;
    d.depth = 3;
    const Discriminator disc(d, 10);
    std::vector<ProbabilityMap> probs = {test::random_probs(rng, 8, 8, 6)};
    DiscTrace trace;
    const auto out = disc.forward(probs, &trace);
    const std::vector<Grid> w = {test::random_grid(rng, out[0].height(), out[0].width(), 1)};
    nn::Gradients scratch(disc.parameters());
    const auto grad = disc.backward(trace, w, scratch, true);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < probs[0].size(); i += 3) {
      Grid probe = probs[0];
      probe.values()[i] += 1e-2;
      const double up = dot(disc.forward(std::vector<ProbabilityMap>{ProbabilityMap::trusted(probe)})[0], w[0]);
      probe.values()[i] -= 2e-2;
      const double down = dot(disc.forward(std::vector<ProbabilityMap>{ProbabilityMap::trusted(probe)})[0], w[0]);
      const double num = (up - down) / 2e-2;
      diff += (num - grad[0].values()[i]) * (num - grad[0].values()[i]);
      norm += grad[0].values()[i] * grad[0].values()[i];
    }
    CHECK(std::sqrt(diff / norm) < 2e-2);
  }

  TEST_CASE("feature adapter maps widths and its gradients check out") {
    std::mt19937_64 rng(10);
    const FeatureAdapter adapter(4, 7, 3);
    const FeatureMap x(test::random_grid(rng, 3, 3, 4));
    const auto y = adapter.forward(x);
    CHECK(y.channels() == 7);
    CHECK(y.height() == 3);
    const Grid w = test::random_grid(rng, 3, 3, 7);
    nn::Gradients grads(adapter.parameters());
    grads.zero();
    const Grid gx = adapter.backward(x, w, grads);
    const Grid numeric =
        test::numeric_gradient([&](const Grid& in) { return dot(adapter.forward(FeatureMap(in)), w); }, x, 1e-2);
    CHECK(test::relative_error(gx, numeric) < 1e-3);
  }

  TEST_CASE("freeze exposes no way to mutate parameters") {
    static_assert(!exposes_parameters<FrozenSegNet>);
    static_assert(exposes_parameters<SegmentationNet>);
    const FrozenSegNet frozen = freeze(SegmentationNet(test::small_net(), 1));
    CHECK(frozen.snapshot().bit_identical(SegmentationNet(test::small_net(), 1).snapshot()));
  }

  TEST_CASE("checkpoint round trip is bit-exact and the header lists every tensor") {
    test::TempDir dir("ckpt");
    SegmentationNet net(SegNetConfig::student_preset(), 12);
    // Exercise awkward float values too.
    net.parameters()[0].value[0] = -0.0f;
    net.parameters()[0].value[1] = std::numeric_limits<float>::denorm_min();
    net.parameters()[0].value[2] = std::numeric_limits<float>::max();
    Checkpoint ckpt{{{"role", "student"}}, net.snapshot(42)};
    save_checkpoint(dir.path() / "a.json", ckpt);
    const auto loaded = load_checkpoint(dir.path() / "a.json");
    CHECK(loaded.params.bit_identical(ckpt.params));
    CHECK(loaded.params.iteration == 42);
    CHECK(loaded.config.at("role") == "student");
    CHECK(std::filesystem::exists(checkpoint_blob_path(dir.path() / "a.json")));

    std::ifstream in(dir.path() / "a.json");
    const auto head = nlohmann::json::parse(in);
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < ckpt.params.tensors.size(); ++i) {
      const auto& t = head.at("tensors")[i];
      CHECK(t.at("name") == ckpt.params.tensors[i].name);
      CHECK(t.at("dtype") == "float32");
      CHECK(t.at("offset").get<std::size_t>() == expected_offset);
      expected_offset += ckpt.params.tensors[i].value.size() * 4;
    }
    CHECK(std::filesystem::file_size(checkpoint_blob_path(dir.path() / "a.json")) == expected_offset);

    SegmentationNet other(SegNetConfig::student_preset(), 99);
    other.load(loaded.params);
    CHECK(other.snapshot(42).bit_identical(ckpt.params));
  }

  TEST_CASE("loading a truncated blob or a mismatched snapshot fails") {
    test::TempDir dir("ckpt_bad");
    const SegmentationNet net(test::small_net(), 1);
    save_checkpoint(dir.path() / "c.json", Checkpoint{{}, net.snapshot()});
    std::filesystem::resize_file(checkpoint_blob_path(dir.path() / "c.json"), 10);
    CHECK_THROWS(load_checkpoint(dir.path() / "c.json"));
    SegmentationNet wider(test::small_net(3, 12), 1);
    CHECK_THROWS(wider.load(net.snapshot()));
  }
}
