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
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dakd/data.hpp"
#include "dakd/models.hpp"
#include "dakd/train.hpp"

namespace dakd {

/// Invalid configuration. `where` is a dotted field path or "line L, column
/// C" for syntax errors.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

/// Everything a command needs besides its flags.
struct ExperimentConfig {
  std::string experiment = "default";
  std::filesystem::path out = "out";
  std::vector<std::uint64_t> seeds = {0, 1, 2};

  SceneSpec scene;
  DomainShiftSpec source_shift = DomainShiftSpec::source_default();
  DomainShiftSpec target_shift = DomainShiftSpec::target_default();
  SplitCounts counts;

  SegNetConfig teacher = SegNetConfig::teacher_preset();
  SegNetConfig student = SegNetConfig::student_preset();
  DiscriminatorConfig discriminator;

  /// Shared run template; max_iters is taken from the per-stage counts.
  TrainPlan train;
  int teacher_iters = 0;
  int student_iters = 0;
  int distill_iters = 0;

  /// Defaults for the toy benchmark.
  static ExperimentConfig defaults();

  std::filesystem::path experiment_dir() const { return out / experiment; }
  std::filesystem::path data_dir() const { return experiment_dir() / "data"; }

  /// Throws ConfigError naming the offending section.
  void validate() const;
};

/// Nested document form used by both config file syntaxes.
nlohmann::json to_document(const ExperimentConfig& c);
/// Overlays `doc` on the defaults. Unknown keys, type mismatches and
/// invalid values raise ConfigError with the field path.
ExperimentConfig from_document(const nlohmann::json& doc);

/// Parses TOML (any extension but .json) or JSON into a document.
nlohmann::json read_config_document(const std::filesystem::path& path);
ExperimentConfig load_config(const std::filesystem::path& path);

std::string to_toml(const nlohmann::json& doc);
/// Stable hash of the resolved configuration, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

}  // namespace dakd
