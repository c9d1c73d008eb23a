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

#include "dakd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dakd/png_io.hpp"

namespace dakd {

namespace {

enum ClassId : std::uint8_t { kBackground = 0, kSky = 1, kRoad = 2, kCar = 3, kBuilding = 4, kTree = 5 };

constexpr int kMaxLayoutAttempts = 200;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(stream)));
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Canvas {
  int h;
  int w;
  std::vector<std::array<double, 3>> rgb;
  std::vector<std::uint8_t> label;

  void paint(int y, int x, std::uint8_t cls, const std::array<double, 3>& color) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    const std::size_t p = static_cast<std::size_t>(y) * w + x;
    label[p] = cls;
    rgb[p] = color;
  }
};

std::array<double, 3> jittered(std::uint8_t cls, double amplitude, std::mt19937_64& rng) {
  auto c = class_palette()[cls];
  for (double& v : c) v = std::clamp(v + uniform_real(rng, -amplitude, amplitude), 0.0, 1.0);
  return c;
}

// Draws the layout; returns false when some class ended up invisible.
bool draw_layout(const SceneSpec& spec, std::mt19937_64& rng, Canvas& canvas) {
  const int h = spec.image_height;
  const int w = spec.image_width;
  const int sky_bottom = uniform_int(rng, h / 5, (h * 7) / 20);
  const int road_top = h - uniform_int(rng, h / 5, (h * 7) / 20);

  const auto sky = jittered(kSky, spec.color_jitter, rng);
  const auto ground = jittered(kBackground, spec.color_jitter, rng);
  const auto road = jittered(kRoad, spec.color_jitter, rng);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (y < sky_bottom) {
        canvas.paint(y, x, kSky, sky);
      } else if (y >= road_top) {
        canvas.paint(y, x, kRoad, road);
      } else {
        canvas.paint(y, x, kBackground, ground);
      }
    }
  }

  // At least one object of each kind, the rest drawn at random.
  const int total = uniform_int(rng, spec.objects_min, spec.objects_max);
  std::vector<std::uint8_t> kinds = {kBuilding, kTree, kCar};
  while (static_cast<int>(kinds.size()) < total) kinds.push_back(static_cast<std::uint8_t>(uniform_int(rng, 3, 5)));
  std::sort(kinds.begin(), kinds.end(), [](std::uint8_t a, std::uint8_t b) {
    // buildings behind trees behind cars
    const auto rank = [](std::uint8_t k) { return k == kBuilding ? 0 : (k == kTree ? 1 : 2); };
    return rank(a) < rank(b);
  });

  for (const std::uint8_t kind : kinds) {
    const auto color = jittered(kind, spec.color_jitter, rng);
    if (kind == kBuilding) {
      const int bw = uniform_int(rng, w / 10, w / 4);
      const int bh = uniform_int(rng, h / 6, h / 2);
      const int x0 = uniform_int(rng, 0, w - bw);
      const int base = road_top - uniform_int(rng, 0, 2);
      for (int y = base - bh; y < base; ++y) {
        for (int x = x0; x < x0 + bw; ++x) canvas.paint(y, x, kBuilding, color);
      }
    } else if (kind == kTree) {
      const int half = uniform_int(rng, std::max(2, w / 20), std::max(3, w / 9));
      const int th = uniform_int(rng, h / 8, h / 3);
      const int cx = uniform_int(rng, half, w - 1 - half);
      const int base = road_top - uniform_int(rng, 0, 3);
      for (int y = base - th; y < base; ++y) {
        const double t = static_cast<double>(y - (base - th)) / th;  // 0 at apex, 1 at base
        const int span = static_cast<int>(std::round(t * half));
        for (int x = cx - span; x <= cx + span; ++x) canvas.paint(y, x, kTree, color);
      }
    } else {
      const double rx = uniform_real(rng, w / 16.0, w / 7.0);
      const double ry = uniform_real(rng, h / 32.0, h / 14.0);
      const double cx = uniform_real(rng, rx, w - rx);
      const double cy = uniform_real(rng, road_top + ry, h - ry);
      for (int y = static_cast<int>(cy - ry) - 1; y <= static_cast<int>(cy + ry) + 1; ++y) {
        for (int x = static_cast<int>(cx - rx) - 1; x <= static_cast<int>(cx + rx) + 1; ++x) {
          const double dx = (x + 0.5 - cx) / rx;
          const double dy = (y + 0.5 - cy) / ry;
          if (dx * dx + dy * dy <= 1.0) canvas.paint(y, x, kCar, color);
        }
      }
    }
  }

  std::array<int, 6> counts{};
  for (auto l : canvas.label) ++counts[l];
  return std::all_of(counts.begin(), counts.end(), [](int c) { return c > 0; });
}

std::array<std::array<double, 3>, 3> hue_rotation(double angle) {
  // Rodrigues rotation about the grey axis (1, 1, 1) / sqrt(3).
  const double c = std::cos(angle);
  const double s = std::sin(angle) / std::sqrt(3.0);
  const double t = (1.0 - c) / 3.0;
  return {{{c + t, t - s, t + s}, {t + s, c + t, t - s}, {t - s, t + s, c + t}}};
}

std::string index_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", i);
  return buf;
}

}  // namespace

void SceneSpec::validate() const {
  if (image_height < 16 || image_width < 16) throw std::invalid_argument("scene image size must be at least 16x16");
  if (classes.size() != 6) {
    throw std::invalid_argument("ShapeScenes renders exactly 6 classes (background, sky, road, car, building, tree)");
  }
  if (objects_min < 3 || objects_max < objects_min) {
    throw std::invalid_argument("objects range must satisfy 3 <= objects_min <= objects_max");
  }
  if (!(color_jitter >= 0.0 && color_jitter <= 0.08)) throw std::invalid_argument("color_jitter must be in [0, 0.08]");
  // Band heights are h/5 .. 7h/20; both must be non-empty.
  if (image_height / 5 < 1) throw std::invalid_argument("degenerate scene: zero-area sky/road bands");
}

std::string to_string(Texture t) { return t == Texture::kFlat ? "flat" : "speckled"; }

Texture texture_from_string(const std::string& s) {
  if (s == "flat") return Texture::kFlat;
  if (s == "speckled") return Texture::kSpeckled;
  throw std::invalid_argument("unknown texture mode '" + s + "'");
}

void DomainShiftSpec::validate() const {
  if (hue_max < hue_min) throw std::invalid_argument("hue_max must be >= hue_min");
  if (brightness_max < brightness_min || brightness_min <= 0.0) {
    throw std::invalid_argument("brightness range must be positive and ordered");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
}

bool DomainShiftSpec::is_identity() const {
  return hue_min == 0.0 && hue_max == 0.0 && brightness_min == 1.0 && brightness_max == 1.0 && noise_sigma == 0.0 &&
         texture == Texture::kFlat;
}

DomainShiftSpec DomainShiftSpec::source_default() {
  DomainShiftSpec s;
  s.noise_sigma = 0.03;
  return s;
}

DomainShiftSpec DomainShiftSpec::target_default() {
  DomainShiftSpec s;
  s.hue_min = 0.5;
  s.hue_max = 0.9;
  s.brightness_min = 0.6;
  s.brightness_max = 0.8;
  s.noise_sigma = 0.03;
  return s;
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = {{"image_height", s.image_height}, {"image_width", s.image_width}, {"classes", s.classes},
       {"objects_min", s.objects_min},   {"objects_max", s.objects_max}, {"color_jitter", s.color_jitter},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  s.image_height = j.at("image_height").get<int>();
  s.image_width = j.at("image_width").get<int>();
  s.classes = j.at("classes").get<std::vector<std::string>>();
  s.objects_min = j.at("objects_min").get<int>();
  s.objects_max = j.at("objects_max").get<int>();
  s.color_jitter = j.at("color_jitter").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const DomainShiftSpec& s) {
  j = {{"hue_min", s.hue_min},
       {"hue_max", s.hue_max},
       {"brightness_min", s.brightness_min},
       {"brightness_max", s.brightness_max},
       {"noise_sigma", s.noise_sigma},
       {"texture", to_string(s.texture)}};
}

void from_json(const nlohmann::json& j, DomainShiftSpec& s) {
  s.hue_min = j.at("hue_min").get<double>();
  s.hue_max = j.at("hue_max").get<double>();
  s.brightness_min = j.at("brightness_min").get<double>();
  s.brightness_max = j.at("brightness_max").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.texture = texture_from_string(j.at("texture").get<std::string>());
}

const std::array<std::array<double, 3>, 6>& class_palette() {
  static const std::array<std::array<double, 3>, 6> palette = {{
      {0.60, 0.50, 0.30},  // background
      {0.45, 0.65, 0.90},  // sky
      {0.30, 0.30, 0.32},  // road
      {0.85, 0.20, 0.25},  // car
      {0.55, 0.55, 0.70},  // building
      {0.15, 0.50, 0.20},  // tree
  }};
  return palette;
}

Sample generate_scene(const SceneSpec& spec, const DomainShiftSpec& shift, std::uint64_t sample_seed) {
  spec.validate();
  shift.validate();
  const int h = spec.image_height;
  const int w = spec.image_width;
  const std::size_t n = static_cast<std::size_t>(h) * w;

  auto layout_rng = stream_rng(sample_seed, 0x1a);
  Canvas canvas{h, w, std::vector<std::array<double, 3>>(n), std::vector<std::uint8_t>(n, 0)};
  bool ok = false;
  for (int attempt = 0; attempt < kMaxLayoutAttempts && !ok; ++attempt) ok = draw_layout(spec, layout_rng, canvas);
  if (!ok) throw std::runtime_error("could not place every class after repeated resampling");

  auto shift_rng = stream_rng(sample_seed, 0x5f);
  const double angle = uniform_real(shift_rng, shift.hue_min, shift.hue_max);
  const double gain = uniform_real(shift_rng, shift.brightness_min, shift.brightness_max);
  const auto rot = hue_rotation(angle);
  std::normal_distribution<double> noise(0.0, shift.noise_sigma > 0.0 ? shift.noise_sigma : 1.0);
  std::uniform_real_distribution<double> speckle(-0.2, 0.2);

  Grid img(h, w, 3);
  for (std::size_t p = 0; p < n; ++p) {
    std::array<double, 3> c = canvas.rgb[p];
    if (angle != 0.0) {
      const auto src = c;
      for (int i = 0; i < 3; ++i) c[i] = rot[i][0] * src[0] + rot[i][1] * src[1] + rot[i][2] * src[2];
    }
    const double texture = shift.texture == Texture::kSpeckled ? 1.0 + speckle(shift_rng) : 1.0;
    for (int i = 0; i < 3; ++i) {
      double v = c[i] * gain * texture;
      if (shift.noise_sigma > 0.0) v += noise(shift_rng);
      img.pixel(p)[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return {ImageTensor(std::move(img)), LabelMap(h, w, spec.num_classes(), std::move(canvas.label))};
}

std::string to_string(Split s) { return s == Split::kTrain ? "train" : "val"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  throw std::invalid_argument("unknown split '" + s + "'");
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json entries_json = nlohmann::json::array();
  for (const auto& e : entries) {
    entries_json.push_back({{"image_path", e.image_path}, {"label_path", e.label_path}, {"seed", e.seed}});
  }
  return {{"version", version},
          {"domain", to_string(domain)},
          {"split", to_string(split)},
          {"labels_eval_only", labels_eval_only},
          {"num_classes", scene.num_classes()},
          {"scene", scene},
          {"shift", shift},
          {"entries", entries_json}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j, std::filesystem::path directory) {
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  m.domain = domain_from_string(j.at("domain").get<std::string>());
  m.split = split_from_string(j.at("split").get<std::string>());
  m.labels_eval_only = j.at("labels_eval_only").get<bool>();
  m.scene = j.at("scene").get<SceneSpec>();
  m.shift = j.at("shift").get<DomainShiftSpec>();
  for (const auto& e : j.at("entries")) {
    m.entries.push_back({e.at("image_path").get<std::string>(), e.at("label_path").get<std::string>(),
                         e.at("seed").get<std::uint64_t>()});
  }
  m.directory = std::move(directory);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  try {
    return DatasetManifest::from_json(nlohmann::json::parse(in), path.parent_path());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest " + path.string() + ": " + e.what());
  }
}

std::filesystem::path manifest_path(const std::filesystem::path& root, Domain domain, Split split) {
  return root / to_string(domain) / to_string(split) / "manifest.json";
}

int SplitCounts::get(Domain d, Split s) const {
  if (d == Domain::kSource) return s == Split::kTrain ? source_train : source_val;
  return s == Split::kTrain ? target_train : target_val;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, Domain domain, Split split, int index) {
  const std::uint64_t stream = (domain == Domain::kSource ? 0u : 2u) + (split == Split::kTrain ? 0u : 1u);
  return splitmix64(splitmix64(dataset_seed) ^ (stream << 40) ^ static_cast<std::uint64_t>(index));
}

std::vector<DatasetManifest> write_dataset(const SceneSpec& spec, const DomainShiftSpec& shift_source,
                                           const DomainShiftSpec& shift_target, const SplitCounts& counts,
                                           const std::filesystem::path& root) {
  spec.validate();
  std::vector<DatasetManifest> manifests;
  for (const Domain domain : {Domain::kSource, Domain::kTarget}) {
    for (const Split split : {Split::kTrain, Split::kVal}) {
      DatasetManifest m;
      m.domain = domain;
      m.split = split;
      m.labels_eval_only = domain == Domain::kTarget && split == Split::kTrain;
      m.scene = spec;
      m.shift = domain == Domain::kSource ? shift_source : shift_target;
      m.directory = root / to_string(domain) / to_string(split);
      std::error_code ec;
      std::filesystem::create_directories(m.directory / "images", ec);
      std::filesystem::create_directories(m.directory / "labels", ec);
      if (ec) throw std::runtime_error("cannot create " + m.directory.string() + ": " + ec.message());

      for (int i = 0; i < counts.get(domain, split); ++i) {
        const std::uint64_t seed = sample_seed(spec.seed, domain, split, i);
        const Sample s = generate_scene(spec, m.shift, seed);
        Raster image{s.image.width(), s.image.height(), 3, {}};
        image.pixels.reserve(s.image.size());
        for (double v : s.image.values()) image.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
        Raster label{s.label.width(), s.label.height(), 1, s.label.values()};
        const ManifestEntry entry{"images/" + index_name(i), "labels/" + index_name(i), seed};
        write_png(m.directory / entry.image_path, image);
        write_png(m.directory / entry.label_path, label);
        m.entries.push_back(entry);
      }
      const auto path = m.directory / "manifest.json";
      std::ofstream out(path);
      if (!out) throw std::runtime_error("cannot write " + path.string());
      out << m.to_json().dump(2) << '\n';
      manifests.push_back(std::move(m));
    }
  }
  return manifests;
}

Dataset load_dataset(const DatasetManifest& manifest) {
  Dataset d;
  d.domain = manifest.domain;
  d.split = manifest.split;
  d.num_classes = manifest.scene.num_classes();
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    try {
      const Raster img = read_png(manifest.directory / e.image_path);
      if (img.channels != 3) throw std::runtime_error("image is not RGB");
      Grid g(img.height, img.width, 3);
      for (std::size_t k = 0; k < img.pixels.size(); ++k) g.values()[k] = img.pixels[k] / 255.0;
      const Raster lab = read_png(manifest.directory / e.label_path);
      if (lab.channels != 1 || lab.width != img.width || lab.height != img.height) {
        throw std::runtime_error("label raster does not match image");
      }
      d.images.emplace_back(std::move(g));
      d.labels.emplace_back(lab.height, lab.width, d.num_classes, lab.pixels);
    } catch (const std::exception& ex) {
      throw std::runtime_error("corrupt dataset entry " + std::to_string(i) + " (" + e.image_path + "): " + ex.what());
    }
  }
  if (d.images.empty()) throw std::runtime_error("manifest in " + manifest.directory.string() + " has no entries");
  return d;
}

BatchStream::BatchStream(std::shared_ptr<const Dataset> data, int batch_size, std::uint64_t seed,
                         bool honor_unsupervised)
    : data_(std::move(data)),
      batch_size_(batch_size),
      strip_labels_(honor_unsupervised && data_->domain == Domain::kTarget && data_->split == Split::kTrain),
      rng_(splitmix64(seed)) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (data_->images.empty()) throw std::invalid_argument("cannot stream an empty dataset");
  order_.resize(data_->images.size());
  reshuffle();
}

void BatchStream::reshuffle() {
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

DomainBatch BatchStream::next() {
  DomainBatch batch;
  batch.domain = data_->domain;
  last_.clear();
  if (!strip_labels_) batch.labels.emplace();
  for (int i = 0; i < batch_size_; ++i) {
    if (cursor_ == order_.size()) reshuffle();
    const int idx = order_[cursor_++];
    last_.push_back(idx);
    batch.images.push_back(data_->images[idx]);
    if (batch.labels) batch.labels->push_back(data_->labels[idx]);
  }
  return batch;
}

BatchStream load_batches(const DatasetManifest& manifest, int batch_size, std::uint64_t seed,
                         bool honor_unsupervised) {
  return BatchStream(std::make_shared<const Dataset>(load_dataset(manifest)), batch_size, seed, honor_unsupervised);
}

}  // namespace dakd
