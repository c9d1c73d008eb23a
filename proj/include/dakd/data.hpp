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

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dakd/core.hpp"

namespace dakd {

/// Layout parameters of a ShapeScenes sample.
struct SceneSpec {
  int image_height = 64;
  int image_width = 64;
  std::vector<std::string> classes = {"background", "sky", "road", "car", "building", "tree"};
  int objects_min = 4;
  int objects_max = 8;
  /// Per-object colour offset amplitude, per channel.
  double color_jitter = 0.05;
  std::uint64_t seed = 0;

  int num_classes() const { return static_cast<int>(classes.size()); }
  void validate() const;
};

enum class Texture { kFlat, kSpeckled };

std::string to_string(Texture t);
Texture texture_from_string(const std::string& s);

/// Pixel-space appearance change applied on top of a rendered scene.
struct DomainShiftSpec {
  double hue_min = 0.0;  // radians
  double hue_max = 0.0;
  double brightness_min = 1.0;
  double brightness_max = 1.0;
  double noise_sigma = 0.0;
  Texture texture = Texture::kFlat;

  void validate() const;
  bool is_identity() const;

  static DomainShiftSpec identity() { return {}; }
  static DomainShiftSpec source_default();
  static DomainShiftSpec target_default();
};

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);
void to_json(nlohmann::json& j, const DomainShiftSpec& s);
void from_json(const nlohmann::json& j, DomainShiftSpec& s);

/// Flat rendering colour of each default class.
const std::array<std::array<double, 3>, 6>& class_palette();

struct Sample {
  ImageTensor image;
  LabelMap label;
};

/// Renders one scene. The label map is the exact generative mask and does
/// not depend on the shift; every class appears at least once.
Sample generate_scene(const SceneSpec& spec, const DomainShiftSpec& shift, std::uint64_t sample_seed);

enum class Split { kTrain, kVal };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string image_path;  // relative to the manifest's directory
  std::string label_path;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  int version = 1;
  Domain domain = Domain::kSource;
  Split split = Split::kTrain;
  /// Target-train labels exist on disk for auditing only.
  bool labels_eval_only = false;
  SceneSpec scene;
  DomainShiftSpec shift;
  std::vector<ManifestEntry> entries;
  std::filesystem::path directory;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j, std::filesystem::path directory);
};

DatasetManifest load_manifest(const std::filesystem::path& manifest_path);
std::filesystem::path manifest_path(const std::filesystem::path& root, Domain domain, Split split);

struct SplitCounts {
  int source_train = 200;
  int source_val = 50;
  int target_train = 200;
  int target_val = 50;

  int get(Domain d, Split s) const;
};

/// Seed of entry `index` of a (domain, split); source and target never share
/// scenes.
std::uint64_t sample_seed(std::uint64_t dataset_seed, Domain domain, Split split, int index);

/// Writes `<root>/<domain>/<split>/{images,labels}/NNNNNN.png` plus
/// manifest.json for all four splits. Returns the manifests in the order
/// source/train, source/val, target/train, target/val.
std::vector<DatasetManifest> write_dataset(const SceneSpec& spec, const DomainShiftSpec& shift_source,
                                           const DomainShiftSpec& shift_target, const SplitCounts& counts,
                                           const std::filesystem::path& root);

/// Decoded split held in memory.
struct Dataset {
  Domain domain = Domain::kSource;
  Split split = Split::kTrain;
  int num_classes = 0;
  std::vector<ImageTensor> images;
  std::vector<LabelMap> labels;
};

/// Decodes every entry; corrupt or missing files are reported with their
/// entry index.
Dataset load_dataset(const DatasetManifest& manifest);

/// Endless shuffled batch stream. Each epoch is a permutation of the split
/// drawn from a generator seeded once with `seed`.
class BatchStream {
 public:
  BatchStream(std::shared_ptr<const Dataset> data, int batch_size, std::uint64_t seed, bool honor_unsupervised);

  DomainBatch next();
  /// Indices of the samples in the most recent batch.
  const std::vector<int>& last_indices() const { return last_; }
  bool strips_labels() const { return strip_labels_; }

 private:
  void reshuffle();

  std::shared_ptr<const Dataset> data_;
  int batch_size_;
  bool strip_labels_;
  std::mt19937_64 rng_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  std::vector<int> last_;
};

BatchStream load_batches(const DatasetManifest& manifest, int batch_size, std::uint64_t seed,
                         bool honor_unsupervised);

}  // namespace dakd
